//! Rigid transforms, rotations and Euler-angle conventions.
//!
//! Quaternions are stored and exchanged as `(w, x, y, z)` with the Hamilton
//! product, in right-handed frames. Roll-pitch-yaw is intrinsic x-y-z:
//! `R = Rx(roll) * Ry(pitch) * Rz(yaw)`.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A rigid transform: `p' = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rigid {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Rigid {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rigid {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self {
            rotation,
            translation: Vector3::zeros(),
        }
    }

    /// URDF-style origin: translation `xyz` and fixed-axis roll/pitch/yaw,
    /// i.e. `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_urdf_origin(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        let r = rot_z(rpy[2]) * rot_y(rpy[1]) * rot_x(rpy[0]);
        Self::new(r, Vector3::from(xyz))
    }

    /// Position + unit quaternion `(w, x, y, z)`.
    pub fn from_pose(position: Vector3<f64>, quat_wxyz: [f64; 4]) -> Self {
        Self::new(quat_to_matrix(quat_wxyz), position)
    }

    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        matrix_to_quat(&self.rotation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Takes the upper 3x4 block; the bottom row is not inspected.
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        Self {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    /// `‖RᵀR − I‖_∞` (max-abs entry).
    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.rotation)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && orthonormality_error(&self.rotation) < tol
            && (self.rotation.determinant() - 1.0).abs() < tol
    }
}

impl Mul for Rigid {
    type Output = Rigid;

    fn mul(self, rhs: Rigid) -> Rigid {
        Rigid {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

impl Mul<&Rigid> for &Rigid {
    type Output = Rigid;

    fn mul(self, rhs: &Rigid) -> Rigid {
        *self * *rhs
    }
}

pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rodrigues rotation by `angle` about the unit vector `axis`.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    let k = skew(axis);
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map so(3) → SO(3).
pub fn exp_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    if theta < 1e-12 {
        let k = skew(omega);
        return Matrix3::identity() + k + k * k * 0.5;
    }
    axis_angle(&(omega / theta), theta)
}

pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    uq.to_rotation_matrix().into_inner()
}

/// Returns `(w, x, y, z)` with `w ≥ 0`.
pub fn matrix_to_quat(r: &Matrix3<f64>) -> [f64; 4] {
    let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let q = uq.quaternion();
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.w, s * q.i, s * q.j, s * q.k]
}

/// Intrinsic x-y-z roll/pitch/yaw: `Rx(roll) * Ry(pitch) * Rz(yaw)`.
pub fn rpy_to_matrix(rpy: [f64; 3]) -> Matrix3<f64> {
    rot_x(rpy[0]) * rot_y(rpy[1]) * rot_z(rpy[2])
}

/// Inverse of [`rpy_to_matrix`].
///
/// With `R = Rx(r) Ry(p) Rz(y)`:
/// `R02 = sin p`, `R12 = −sin r cos p`, `R22 = cos r cos p`,
/// `R01 = −cos p sin y`, `R00 = cos p cos y`.
/// At `|sin p| ≈ 1` roll and yaw are coupled; roll is set to 0 and
/// `yaw = atan2(R10, R11)`.
pub fn matrix_to_rpy(r: &Matrix3<f64>) -> [f64; 3] {
    let sp = r[(0, 2)].clamp(-1.0, 1.0);
    let pitch = sp.asin();
    if (1.0 - sp.abs()) < 1e-12 {
        let yaw = r[(1, 0)].atan2(r[(1, 1)]);
        [0.0, pitch, yaw]
    } else {
        let roll = (-r[(1, 2)]).atan2(r[(2, 2)]);
        let yaw = (-r[(0, 1)]).atan2(r[(0, 0)]);
        [roll, pitch, yaw]
    }
}

/// Nearest rotation in the Frobenius sense (polar decomposition via SVD).
pub fn project_to_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * vt;
    }
    r
}

#[derive(Serialize, Deserialize)]
struct RigidDoc {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl Serialize for Rigid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut rotation = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                rotation[r * 3 + c] = self.rotation[(r, c)];
            }
        }
        RigidDoc {
            rotation,
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rigid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = RigidDoc::deserialize(d)?;
        Ok(Rigid {
            rotation: Matrix3::from_row_slice(&doc.rotation),
            translation: Vector3::from(doc.translation),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn rpy_round_trip_away_from_lock() {
        for rpy in [[0.1, -0.4, 2.0], [-2.5, 0.3, -1.0], [0.0, 0.0, 0.0], [3.0, 1.2, -3.0]] {
            let back = matrix_to_rpy(&rpy_to_matrix(rpy));
            for i in 0..3 {
                assert_relative_eq!(back[i], rpy[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gimbal_lock_sets_roll_to_zero() {
        for pitch in [FRAC_PI_2, -FRAC_PI_2] {
            let r = rpy_to_matrix([0.7, pitch, -0.2]);
            let rpy = matrix_to_rpy(&r);
            assert_eq!(rpy[0], 0.0);
            assert_relative_eq!(rpy_to_matrix(rpy), r, epsilon = 1e-9);
        }
    }

    #[test]
    fn quaternion_convention_is_wxyz_hamilton() {
        // 90° about z: (cos 45°, 0, 0, sin 45°)
        let h = FRAC_PI_2 / 2.0;
        let r = quat_to_matrix([h.cos(), 0.0, 0.0, h.sin()]);
        assert_relative_eq!(r, rot_z(FRAC_PI_2), epsilon = 1e-15);
        let q = matrix_to_quat(&r);
        assert_relative_eq!(q[0], h.cos(), epsilon = 1e-15);
        assert_relative_eq!(q[3], h.sin(), epsilon = 1e-15);
    }

    #[test]
    fn inverse_composes_to_identity() {
        let t = Rigid::new(rpy_to_matrix([0.3, -0.2, 1.1]), Vector3::new(0.4, -1.0, 2.0));
        let i = t * t.inverse();
        assert_relative_eq!(i.rotation, Matrix3::identity(), epsilon = 1e-15);
        assert_relative_eq!(i.translation, Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn homogeneous_round_trip() {
        let t = Rigid::from_urdf_origin([1.0, 2.0, 3.0], [0.1, 0.2, 0.3]);
        assert_eq!(Rigid::from_homogeneous(&t.to_homogeneous()), t);
    }

    #[test]
    fn urdf_origin_is_fixed_axis_rpy() {
        let t = Rigid::from_urdf_origin([0.0; 3], [0.0, 0.0, FRAC_PI_2]);
        assert_relative_eq!(t.rotation * Vector3::x(), Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn serde_is_row_major_and_exact() {
        let t = Rigid::from_urdf_origin([0.1, 0.2, 0.3], [0.4, -0.5, 0.6]);
        let s = serde_json::to_string(&t).unwrap();
        let back: Rigid = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["rotation"][1].as_f64().unwrap(), t.rotation[(0, 1)]);
    }
}
