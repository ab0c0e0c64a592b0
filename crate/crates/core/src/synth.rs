//! Deterministic smooth synthetic trajectories for round-trip testing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, TAU};

use crate::camera::CameraModel;
use crate::episode::{ArmState, Episode, EpisodeMeta, RobotState};
use crate::fixtures;
use crate::kinematics::{forward_kinematics_arm, Arm, ArmChain, KinematicChain, KinematicsError};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub camera: CameraModel,
    /// Upper bound on any joint's change between consecutive frames.
    pub max_step: f64,
    /// Range used for joints without limits.
    pub unlimited_range: (f64, f64),
    /// Number of sinusoids summed per joint.
    pub harmonics: usize,
    pub fps: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            camera: fixtures::bimanual_camera(),
            max_step: 0.03,
            unlimited_range: (-0.5, 0.5),
            harmonics: 3,
            fps: 30.0,
        }
    }
}

pub fn synth_trajectory(chain: &KinematicChain, frames: usize, seed: u64) -> Result<Episode, KinematicsError> {
    synth_trajectory_with(chain, frames, seed, &SynthConfig::default())
}

/// Each joint follows `mid + half · (b + A · Σ w_i sin(ω_i τ + φ_i))` with
/// `Σ w_i = 1` and `|b| + A ≤ 1`, so it stays inside its limits. `A` is capped
/// so that `half · A · Σ w_i ω_i ≤ max_step`, which bounds every per-frame
/// change. Grippers follow `0.5 − 0.5 cos(π τ / P)` and reach both 0 and 1.
/// End-effector poses come from forward kinematics of the same joint values.
pub fn synth_trajectory_with(chain: &KinematicChain, frames: usize, seed: u64, cfg: &SynthConfig) -> Result<Episode, KinematicsError> {
    if frames < 2 {
        return Err(KinematicsError::Argument(format!("need at least 2 frames, got {frames}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracks: Vec<(Arm, Vec<Vec<f64>>, Vec<f64>)> = Vec::new();
    for arm in Arm::BOTH {
        let Ok(arm_chain) = chain.arm(arm) else {
            continue;
        };
        let q = joint_tracks(arm_chain, frames, cfg, &mut rng);
        let g = gripper_track(frames, &mut rng);
        tracks.push((arm, q, g));
    }

    let mut states = Vec::with_capacity(frames);
    for tau in 0..frames {
        let mut left = empty_arm();
        let mut right = empty_arm();
        for (arm, q, g) in &tracks {
            let arm_chain = chain.arm(*arm)?;
            let q_t = q[tau].clone();
            let ee = forward_kinematics_arm(arm_chain, &q_t)?.terminal();
            let state = ArmState {
                q: q_t,
                g: g[tau],
                position: ee.translation,
                quat: ee.quaternion_wxyz(),
            };
            match arm {
                Arm::Left => left = state,
                Arm::Right => right = state,
            }
        }
        states.push(RobotState {
            t: tau as u64,
            left,
            right,
            camera: cfg.camera,
        });
    }
    Ok(Episode {
        states,
        meta: EpisodeMeta {
            chain: String::new(),
            fps: cfg.fps,
            source: format!("synth:{seed}"),
        },
    })
}

fn empty_arm() -> ArmState {
    ArmState {
        q: Vec::new(),
        g: 0.0,
        position: nalgebra::Vector3::zeros(),
        quat: [1.0, 0.0, 0.0, 0.0],
    }
}

fn joint_tracks(arm: &ArmChain, frames: usize, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let per_joint: Vec<Vec<f64>> = arm
        .movable_joints()
        .map(|j| {
            let (lo, hi) = j.limits.unwrap_or(cfg.unlimited_range);
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            let n = cfg.harmonics.max(1);
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let waves: Vec<(f64, f64, f64)> = raw
                .iter()
                .map(|w| (w / total, rng.random_range(0.01..0.12), rng.random_range(0.0..TAU)))
                .collect();
            let rate: f64 = waves.iter().map(|(w, om, _)| w * om).sum();
            let mut amp = rng.random_range(0.3..0.8);
            if half * amp * rate > cfg.max_step {
                amp = cfg.max_step / (half * rate);
            }
            let bias = rng.random_range(-1.0..1.0) * (1.0 - amp) * 0.5;
            (0..frames)
                .map(|tau| {
                    let s: f64 = waves.iter().map(|(w, om, ph)| w * (om * tau as f64 + ph).sin()).sum();
                    if half > 0.0 {
                        mid + half * (bias + amp * s)
                    } else {
                        mid
                    }
                })
                .collect()
        })
        .collect();
    (0..frames).map(|tau| per_joint.iter().map(|track| track[tau]).collect()).collect()
}

fn gripper_track(frames: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cycles = rng.random_range(1..=2usize);
    let period = ((frames - 1) / cycles).max(1) as f64;
    (0..frames).map(|tau| 0.5 - 0.5 * (PI * tau as f64 / period).cos()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::parse_urdf;

    fn bimanual() -> KinematicChain {
        parse_urdf(fixtures::BIMANUAL_URDF).unwrap()
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let chain = bimanual();
        let a = synth_trajectory(&chain, 32, 7).unwrap();
        let b = synth_trajectory(&chain, 32, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_trajectory(&chain, 32, 8).unwrap());
    }

    #[test]
    fn rejects_short_episodes() {
        assert!(matches!(synth_trajectory(&bimanual(), 1, 0), Err(KinematicsError::Argument(_))));
    }

    #[test]
    fn zero_width_limits_give_constant_trajectory() {
        let mut chain = bimanual();
        for arm in &mut chain.arms {
            for j in &mut arm.joints {
                if j.is_movable() {
                    j.limits = Some((0.1, 0.1));
                }
            }
        }
        let ep = synth_trajectory(&chain, 16, 3).unwrap();
        for s in &ep.states {
            assert_eq!(s.left.q, ep.states[0].left.q);
            assert_eq!(s.right.position, ep.states[0].right.position);
        }
    }

    #[test]
    fn per_frame_joint_change_is_bounded() {
        let chain = bimanual();
        let cfg = SynthConfig::default();
        let mut worst: f64 = 0.0;
        for seed in 0..1000 {
            let ep = synth_trajectory_with(&chain, 64, seed, &cfg).unwrap();
            for w in ep.states.windows(2) {
                for arm in Arm::BOTH {
                    for (a, b) in w[0].arm(arm).q.iter().zip(&w[1].arm(arm).q) {
                        worst = worst.max((a - b).abs());
                    }
                }
            }
        }
        assert!(worst <= cfg.max_step, "max step {worst}");
    }

    #[test]
    fn trajectories_respect_limits_and_fk() {
        let chain = bimanual();
        let ep = synth_trajectory(&chain, 64, 11).unwrap();
        ep.validate().unwrap();
        for s in &ep.states {
            for arm in Arm::BOTH {
                let a = s.arm(arm);
                let ac = chain.arm(arm).unwrap();
                for (j, v) in ac.movable_joints().zip(&a.q) {
                    let (lo, hi) = j.limits.unwrap();
                    assert!(*v >= lo && *v <= hi);
                }
                let fk = forward_kinematics_arm(ac, &a.q).unwrap().terminal();
                assert_eq!(fk.translation, a.position);
                assert!((0.0..=1.0).contains(&a.g));
            }
        }
        let gs: Vec<f64> = ep.states.iter().map(|s| s.left.g).collect();
        assert_eq!(gs.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(gs.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
    }
}
