//! Robot descriptions and camera shipped with the crate for tests, demos and
//! the round-trip harness.

use nalgebra::Vector3;

use crate::camera::CameraModel;

/// Two 5-DoF arms on a shared torso, each with two opposing prismatic fingers.
pub const BIMANUAL_URDF: &str = include_str!("../fixtures/bimanual.urdf");

/// Two z-revolute joints with 1 m links along x and a fixed tool frame.
pub const PLANAR_TWO_LINK_URDF: &str = include_str!("../fixtures/planar_two_link.urdf");

/// 640×480, f = 500 px, looking down at the bimanual workspace. Image x runs
/// along world +x, so the left arm appears on the left.
pub fn bimanual_camera() -> CameraModel {
    CameraModel::look_at(
        Vector3::new(0.0, 0.5, 0.75),
        Vector3::new(0.0, 0.95, 0.3),
        Vector3::x(),
        CameraModel::intrinsics(500.0, 500.0, 320.0, 240.0),
        640,
        480,
    )
    .expect("fixture camera is valid")
}
