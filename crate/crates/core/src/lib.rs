//! Kinematics, camera geometry, KVAF rendering and action recovery.
//!
//! A KVAF (kinematic-to-visual action field) is an RGB video that draws a
//! robot's skeleton, joints, fingers, end-effector heatmap and pose axes in
//! a target camera. [`render`] turns joint trajectories into KVAFs and
//! [`recovery`] reads numerical actions back out of them.

// Negated comparisons (`!(x > 0.0)`) are used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod episode;
pub mod fixtures;
pub mod kinematics;
pub mod par;
pub mod recovery;
pub mod render;
pub mod roundtrip;
pub mod synth;
pub mod transform;

pub use camera::{CameraModel, DepthRange, PnpSolution, Projection};
pub use episode::{ArmState, Episode, RobotState};
pub use kinematics::{Arm, KeypointSet, KinematicChain, LinkPoseSet};
pub use transform::Rigid;
