//! Per-frame robot state and whole episodes.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraModel;
use crate::kinematics::Arm;
use crate::transform::Rigid;

#[derive(Debug, Error, PartialEq)]
pub enum EpisodeError {
    #[error("episode has no frames")]
    Empty,
    #[error("frame index {t} at row {row} is not strictly increasing")]
    FrameOrder { row: usize, t: u64 },
    #[error("row {row}: {message}")]
    Invalid { row: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    pub q: Vec<f64>,
    /// Normalized gripper opening, nominally in `[0, 1]`.
    pub g: f64,
    /// End-effector position, meters.
    pub position: Vector3<f64>,
    /// End-effector orientation `(w, x, y, z)`.
    pub quat: [f64; 4],
}

impl ArmState {
    pub fn ee_pose(&self) -> Rigid {
        Rigid::from_pose(self.position, self.quat)
    }

    pub fn quat_norm_error(&self) -> f64 {
        (self.quat.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub t: u64,
    pub left: ArmState,
    pub right: ArmState,
    pub camera: CameraModel,
}

impl RobotState {
    pub fn arm(&self, arm: Arm) -> &ArmState {
        match arm {
            Arm::Left => &self.left,
            Arm::Right => &self.right,
        }
    }

    pub fn arm_mut(&mut self, arm: Arm) -> &mut ArmState {
        match arm {
            Arm::Left => &mut self.left,
            Arm::Right => &mut self.right,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    /// Path or name of the robot description the joint values refer to.
    pub chain: String,
    pub fps: f64,
    pub source: String,
}

impl Default for EpisodeMeta {
    fn default() -> Self {
        Self {
            chain: String::new(),
            fps: 30.0,
            source: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub states: Vec<RobotState>,
    pub meta: EpisodeMeta,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Checks frame ordering, quaternion norms (1e-6), finiteness and that
    /// every frame uses a camera of the same size.
    pub fn validate(&self) -> Result<(), EpisodeError> {
        let first = self.states.first().ok_or(EpisodeError::Empty)?;
        let dims = (first.camera.width, first.camera.height);
        for (row, s) in self.states.iter().enumerate() {
            if row > 0 && s.t <= self.states[row - 1].t {
                return Err(EpisodeError::FrameOrder { row, t: s.t });
            }
            if (s.camera.width, s.camera.height) != dims {
                return Err(EpisodeError::Invalid {
                    row,
                    message: "camera size differs from the first frame".into(),
                });
            }
            s.camera.validate().map_err(|e| EpisodeError::Invalid {
                row,
                message: e.to_string(),
            })?;
            for arm in Arm::BOTH {
                let a = s.arm(arm);
                let finite =
                    a.q.iter()
                        .chain(a.position.iter())
                        .chain(a.quat.iter())
                        .chain(std::iter::once(&a.g))
                        .all(|v| v.is_finite());
                if !finite {
                    return Err(EpisodeError::Invalid {
                        row,
                        message: format!("non-finite value in {arm} arm state"),
                    });
                }
                if a.quat_norm_error() > 1e-6 {
                    return Err(EpisodeError::Invalid {
                        row,
                        message: format!("{arm} quaternion is not unit norm"),
                    });
                }
            }
        }
        Ok(())
    }
}
