//! Pinhole projection, episode depth ranges and PnP pose recovery.

use nalgebra::{Matrix3, Matrix4, Matrix6, SMatrix, SVector, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::KeypointSet;
use crate::transform::{exp_so3, project_to_so3, Rigid};

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid depth range: z_min {z_min} must be below z_max {z_max}")]
    InvalidRange { z_min: f64, z_max: f64 },
    #[error("no visible keypoints to estimate a depth range from")]
    NoVisiblePoints,
    #[error("extrinsic matrix is not invertible as a rigid transform")]
    NonInvertibleExtrinsic,
}

#[derive(Debug, Error, PartialEq)]
pub enum PnpError {
    #[error("PnP needs at least 4 correspondences, got {0}")]
    NotEnoughPoints(usize),
    #[error("degenerate local point configuration (collinear or coincident)")]
    Degenerate,
    #[error("non-finite correspondence")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraDoc", into = "CameraDoc")]
pub struct CameraModel {
    /// Intrinsics, pixels.
    pub k: Matrix3<f64>,
    /// World-to-camera extrinsics.
    pub e: Matrix4<f64>,
    pub width: u32,
    pub height: u32,
}

/// On-disk camera layout: row-major `K` (9) and `E` (16).
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraDoc {
    #[serde(rename = "K")]
    k: Vec<f64>,
    #[serde(rename = "E")]
    e: Vec<f64>,
    width: u32,
    height: u32,
}

impl TryFrom<CameraDoc> for CameraModel {
    type Error = CameraError;

    fn try_from(doc: CameraDoc) -> Result<Self, CameraError> {
        if doc.k.len() != 9 || doc.e.len() != 16 {
            return Err(CameraError::InvalidCamera(format!(
                "K needs 9 and E needs 16 numbers, got {} and {}",
                doc.k.len(),
                doc.e.len()
            )));
        }
        CameraModel::new(
            Matrix3::from_row_slice(&doc.k),
            Matrix4::from_row_slice(&doc.e),
            doc.width,
            doc.height,
        )
    }
}

impl From<CameraModel> for CameraDoc {
    fn from(c: CameraModel) -> Self {
        CameraDoc {
            k: c.k.transpose().iter().copied().collect(),
            e: c.e.transpose().iter().copied().collect(),
            width: c.width,
            height: c.height,
        }
    }
}

impl CameraModel {
    pub fn new(k: Matrix3<f64>, e: Matrix4<f64>, width: u32, height: u32) -> Result<Self, CameraError> {
        let cam = Self { k, e, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let k = &self.k;
        if k.iter().chain(self.e.iter()).any(|v| !v.is_finite()) {
            return Err(CameraError::InvalidCamera("non-finite entries".into()));
        }
        if k[(2, 2)] != 1.0 || k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(CameraError::InvalidCamera("K must be upper-triangular with K[2][2] = 1".into()));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(CameraError::InvalidCamera("focal lengths must be positive".into()));
        }
        if !self.extrinsic().is_valid(1e-6) {
            return Err(CameraError::InvalidCamera("E rotation block is not a rotation".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::InvalidCamera("image size must be positive".into()));
        }
        Ok(())
    }

    pub fn intrinsics(fx: f64, fy: f64, cx: f64, cy: f64) -> Matrix3<f64> {
        Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
    }

    /// Camera at `eye` looking at `target`; image x follows `right`
    /// projected orthogonal to the view direction, image y points down.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        right: Vector3<f64>,
        k: Matrix3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self, CameraError> {
        let z = (target - eye).normalize();
        let x = (right - z * right.dot(&z)).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let e = Rigid::new(r, -(r * eye)).to_homogeneous();
        Self::new(k, e, width, height)
    }

    pub fn extrinsic(&self) -> Rigid {
        Rigid::from_homogeneous(&self.e)
    }

    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        (self.e * p_world.push(1.0)).xyz()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Visible,
    Culled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub status: Visibility,
    pub pixel: Vector2<f64>,
    /// Camera-frame z.
    pub depth: f64,
}

impl Projection {
    pub fn visible(&self) -> Option<(Vector2<f64>, f64)> {
        (self.status == Visibility::Visible).then_some((self.pixel, self.depth))
    }
}

/// `p_C = E [p_W; 1]`, `û = K p_C`, `(u, v) = (û_x/û_z, û_y/û_z)`; culled when `z ≤ 0`.
pub fn project_point(p_world: &Vector3<f64>, cam: &CameraModel) -> Projection {
    let pc = cam.to_camera(p_world);
    project_camera_point(&pc, &cam.k)
}

pub fn project_camera_point(pc: &Vector3<f64>, k: &Matrix3<f64>) -> Projection {
    if !(pc.z > 0.0) {
        return Projection {
            status: Visibility::Culled,
            pixel: Vector2::new(f64::NAN, f64::NAN),
            depth: pc.z,
        };
    }
    let uh = k * pc;
    let pixel = Vector2::new(uh.x / uh.z, uh.y / uh.z);
    let status = if pixel.iter().all(|v| v.is_finite()) {
        Visibility::Visible
    } else {
        Visibility::Culled
    };
    Projection {
        status,
        pixel,
        depth: pc.z,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub z_min: f64,
    pub z_max: f64,
}

impl DepthRange {
    pub fn new(z_min: f64, z_max: f64) -> Result<Self, CameraError> {
        if z_min < z_max && z_min.is_finite() && z_max.is_finite() {
            Ok(Self { z_min, z_max })
        } else {
            Err(CameraError::InvalidRange { z_min, z_max })
        }
    }
}

/// `clip((z − z_min) / (z_max − z_min), 0, 1)`.
pub fn normalize_depth(z: f64, range: &DepthRange) -> f64 {
    ((z - range.z_min) / (range.z_max - range.z_min)).clamp(0.0, 1.0)
}

pub const DEFAULT_DEPTH_MARGIN: f64 = 0.05;

pub fn estimate_depth_range<'a, I>(keypoints: I, cam: &CameraModel, margin: f64) -> Result<DepthRange, CameraError>
where
    I: IntoIterator<Item = &'a KeypointSet>,
{
    depth_range_from_depths(
        keypoints
            .into_iter()
            .flat_map(|kp| kp.all_points())
            .filter_map(|p| project_point(p, cam).visible().map(|(_, z)| z)),
        margin,
    )
}

/// Min/max of visible depths, padded by `margin · (max − min)` on each side.
/// A zero-width range is widened to `max(2 · margin · z, 1e-3)` around `z`.
pub fn depth_range_from_depths<I: IntoIterator<Item = f64>>(depths: I, margin: f64) -> Result<DepthRange, CameraError> {
    let (lo, hi) = depths
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), z| (lo.min(z), hi.max(z)));
    if !lo.is_finite() {
        return Err(CameraError::NoVisiblePoints);
    }
    let width = hi - lo;
    if width > 0.0 {
        DepthRange::new(lo - margin * width, hi + margin * width)
    } else {
        let w = (2.0 * margin * lo).max(1e-3);
        DepthRange::new(lo - 0.5 * w, lo + 0.5 * w)
    }
}

/// Pose of an object in the camera frame: `p_C = R p_local + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSolution {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub reprojection_rmse: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl PnpSolution {
    pub fn pose(&self) -> Rigid {
        Rigid::new(self.rotation, self.translation)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PnpOptions {
    pub max_iterations: usize,
    /// Depth used to back-project the identity-rotation start. When absent it
    /// is estimated from the ratio of 3D to 2D point spread.
    pub depth_hint: Option<f64>,
}

impl Default for PnpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            depth_hint: None,
        }
    }
}

pub fn solve_pnp(correspondences: &[(Vector3<f64>, Vector2<f64>)], k: &Matrix3<f64>) -> Result<PnpSolution, PnpError> {
    solve_pnp_with(correspondences, k, &PnpOptions::default())
}

/// Damped Gauss–Newton over SE(3) on the summed squared reprojection error.
///
/// Two deterministic starts are refined and the lower-cost result returned:
/// a scaled-orthographic linear fit (skipped for coplanar local points) and
/// identity rotation with the centroid back-projected at the hinted or
/// spread-estimated depth.
pub fn solve_pnp_with(
    correspondences: &[(Vector3<f64>, Vector2<f64>)],
    k: &Matrix3<f64>,
    opts: &PnpOptions,
) -> Result<PnpSolution, PnpError> {
    let n = correspondences.len();
    if n < 4 {
        return Err(PnpError::NotEnoughPoints(n));
    }
    if correspondences
        .iter()
        .any(|(p, u)| !p.iter().chain(u.iter()).all(|v| v.is_finite()))
    {
        return Err(PnpError::NonFinite);
    }
    let centroid = correspondences.iter().map(|(p, _)| p).sum::<Vector3<f64>>() / n as f64;
    let scatter: Matrix3<f64> = correspondences
        .iter()
        .map(|(p, _)| (p - centroid) * (p - centroid).transpose())
        .sum();
    let eig = scatter.symmetric_eigen().eigenvalues;
    let (s_max, s_mid) = sorted_top_two(&eig);
    if s_max <= 1e-24 || s_mid <= 1e-12 * s_max {
        return Err(PnpError::Degenerate);
    }

    let k_inv = k.try_inverse().ok_or(PnpError::Degenerate)?;
    let mut starts = Vec::with_capacity(2);
    if let Some(start) = weak_perspective_start(correspondences, &k_inv, &centroid) {
        starts.push(start);
    }
    starts.push(identity_start(correspondences, k, &k_inv, &centroid, opts.depth_hint));

    let best = starts
        .into_iter()
        .map(|s| refine(correspondences, k, s, opts.max_iterations))
        .min_by(|a, b| a.reprojection_rmse.total_cmp(&b.reprojection_rmse))
        .expect("at least one start");
    Ok(best)
}

fn sorted_top_two(v: &Vector3<f64>) -> (f64, f64) {
    let mut a = [v.x, v.y, v.z];
    a.sort_by(|x, y| y.total_cmp(x));
    (a[0], a[1])
}

fn identity_start(
    corr: &[(Vector3<f64>, Vector2<f64>)],
    k: &Matrix3<f64>,
    k_inv: &Matrix3<f64>,
    centroid: &Vector3<f64>,
    depth_hint: Option<f64>,
) -> Rigid {
    let n = corr.len() as f64;
    let mean_px = corr.iter().map(|(_, u)| u).sum::<Vector2<f64>>() / n;
    let depth = depth_hint.filter(|d| *d > 0.0).unwrap_or_else(|| {
        let spread3 = (corr.iter().map(|(p, _)| (p - centroid).norm_squared()).sum::<f64>() / n).sqrt();
        let spread2 = (corr.iter().map(|(_, u)| (u - mean_px).norm_squared()).sum::<f64>() / n).sqrt();
        let f = 0.5 * (k[(0, 0)] + k[(1, 1)]);
        if spread2 > 0.0 {
            f * spread3 / spread2
        } else {
            1.0
        }
    });
    let ray = k_inv * mean_px.push(1.0);
    Rigid::new(Matrix3::identity(), ray * depth - centroid)
}

/// Linear fit of `m_i ≈ A p_i + b` in normalized coordinates, where
/// `A = R_{1:2} / z̄`. Returns `None` when the fit is rank deficient.
fn weak_perspective_start(corr: &[(Vector3<f64>, Vector2<f64>)], k_inv: &Matrix3<f64>, centroid: &Vector3<f64>) -> Option<Rigid> {
    let mut ata = SMatrix::<f64, 4, 4>::zeros();
    let mut atb = SMatrix::<f64, 4, 2>::zeros();
    for (p, u) in corr {
        let m = k_inv * u.push(1.0);
        let m = Vector2::new(m.x / m.z, m.y / m.z);
        let row = SVector::<f64, 4>::new(p.x - centroid.x, p.y - centroid.y, p.z - centroid.z, 1.0);
        ata += row * row.transpose();
        atb += row * m.transpose();
    }
    let svd = ata.svd(true, true);
    if svd.singular_values.min() <= 1e-12 * svd.singular_values.max() {
        return None;
    }
    let sol = svd.solve(&atb, 1e-15).ok()?;
    let r1 = Vector3::new(sol[(0, 0)], sol[(1, 0)], sol[(2, 0)]);
    let r2 = Vector3::new(sol[(0, 1)], sol[(1, 1)], sol[(2, 1)]);
    let (n1, n2) = (r1.norm(), r2.norm());
    if n1 < 1e-12 || n2 < 1e-12 {
        return None;
    }
    let scale = 0.5 * (n1 + n2);
    let (r1, r2) = (r1 / n1, r2 / n2);
    let r = project_to_so3(&Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r1.cross(&r2).transpose()]));
    let z = 1.0 / scale;
    let t_centroid = Vector3::new(sol[(3, 0)] * z, sol[(3, 1)] * z, z);
    Some(Rigid::new(r, t_centroid - r * centroid))
}

struct Linearization {
    cost: f64,
    jtj: Matrix6<f64>,
    jtr: Vector6<f64>,
}

fn linearize(corr: &[(Vector3<f64>, Vector2<f64>)], k: &Matrix3<f64>, pose: &Rigid) -> Option<Linearization> {
    let mut lin = Linearization {
        cost: 0.0,
        jtj: Matrix6::zeros(),
        jtr: Vector6::zeros(),
    };
    let k0 = k.row(0).transpose();
    let k1 = k.row(1).transpose();
    for (p, u) in corr {
        let rp = pose.rotation * p;
        let pc = rp + pose.translation;
        if !(pc.z > 0.0) {
            return None;
        }
        let uh = k * pc;
        let proj = Vector2::new(uh.x / pc.z, uh.y / pc.z);
        let r = proj - u;
        lin.cost += r.norm_squared();
        // d(u,v)/d p_C
        let du = (k0 - Vector3::z() * proj.x) / pc.z;
        let dv = (k1 - Vector3::z() * proj.y) / pc.z;
        // left perturbation: d p_C = −[R p]× δω + δt
        let mut j = SMatrix::<f64, 2, 6>::zeros();
        for (row, d) in [du, dv].iter().enumerate() {
            let rot = rp.cross(d);
            j.fixed_view_mut::<1, 3>(row, 0).copy_from(&rot.transpose());
            j.fixed_view_mut::<1, 3>(row, 3).copy_from(&d.transpose());
        }
        lin.jtj += j.transpose() * j;
        lin.jtr += j.transpose() * r;
    }
    Some(lin)
}

fn refine(corr: &[(Vector3<f64>, Vector2<f64>)], k: &Matrix3<f64>, start: Rigid, max_iters: usize) -> PnpSolution {
    let n = corr.len() as f64;
    let mut pose = start;
    let mut lin = linearize(corr, k, &pose);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let done = |l: &Linearization| l.cost < 1e-8 || l.jtr.norm() < 1e-10;

    // Keep refining past the convergence threshold until no step helps.
    while let Some(cur) = lin.as_ref() {
        if cur.jtr.norm() < 1e-10 || cur.cost < 1e-24 || iterations >= max_iters {
            break;
        }
        iterations += 1;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = cur.jtj;
            for i in 0..6 {
                a[(i, i)] += lambda * cur.jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-cur.jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let omega = Vector3::new(step[0], step[1], step[2]);
            let dt = Vector3::new(step[3], step[4], step[5]);
            let dr = exp_so3(&omega);
            let candidate = Rigid::new(dr * pose.rotation, pose.translation + dt);
            match linearize(corr, k, &candidate) {
                Some(next) if next.cost < cur.cost => {
                    pose = candidate;
                    lin = Some(next);
                    lambda = (lambda * 0.1).max(1e-12);
                    accepted = true;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            break;
        }
    }

    match lin {
        Some(l) => PnpSolution {
            rotation: pose.rotation,
            translation: pose.translation,
            reprojection_rmse: (l.cost / n).sqrt(),
            converged: done(&l),
            iterations,
        },
        None => PnpSolution {
            rotation: pose.rotation,
            translation: pose.translation,
            reprojection_rmse: f64::INFINITY,
            converged: false,
            iterations,
        },
    }
}

/// `E⁻¹ · pose_cam`.
pub fn camera_to_world(pose_cam: &Rigid, e: &Matrix4<f64>) -> Result<Rigid, CameraError> {
    let ext = Rigid::from_homogeneous(e);
    let bottom_ok = e[(3, 0)] == 0.0 && e[(3, 1)] == 0.0 && e[(3, 2)] == 0.0 && e[(3, 3)] == 1.0;
    if !bottom_ok || !ext.is_valid(1e-6) {
        return Err(CameraError::NonInvertibleExtrinsic);
    }
    Ok(ext.inverse() * *pose_cam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::rpy_to_matrix;
    use approx::assert_relative_eq;

    fn cam(f: f64) -> CameraModel {
        CameraModel::new(CameraModel::intrinsics(f, f, 320.0, 240.0), Matrix4::identity(), 640, 480).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = project_point(&Vector3::new(0.0, 0.0, 1.0), &cam(500.0));
        assert_eq!(p.status, Visibility::Visible);
        assert_eq!(p.pixel, Vector2::new(320.0, 240.0));
        assert_eq!(p.depth, 1.0);
    }

    #[test]
    fn behind_camera_is_culled() {
        assert_eq!(project_point(&Vector3::new(0.0, 0.0, -1.0), &cam(500.0)).status, Visibility::Culled);
        assert_eq!(project_point(&Vector3::new(0.3, 0.0, 0.0), &cam(500.0)).status, Visibility::Culled);
    }

    #[test]
    fn hand_evaluated_projection() {
        let p = project_point(&Vector3::new(0.1, -0.2, 2.0), &cam(500.0));
        assert_relative_eq!(p.pixel, Vector2::new(345.0, 190.0), epsilon = 1e-12);
        assert_eq!(p.depth, 2.0);
    }

    #[test]
    fn culling_boundary() {
        let c = cam(500.0);
        let mut eps = 1.0;
        while eps >= 1e-12 {
            assert_eq!(project_point(&Vector3::new(0.0, 0.0, eps), &c).status, Visibility::Visible);
            eps /= 10.0;
        }
    }

    #[test]
    fn normalize_depth_identities() {
        let r = DepthRange::new(0.5, 2.5).unwrap();
        assert_eq!(normalize_depth(0.5, &r), 0.0);
        assert_eq!(normalize_depth(2.5, &r), 1.0);
        assert_eq!(normalize_depth(1.5, &r), 0.5);
        assert_eq!(normalize_depth(-4.0, &r), 0.0);
        assert!(DepthRange::new(1.0, 1.0).is_err());
    }

    #[test]
    fn depth_range_from_depth_sets() {
        let r = depth_range_from_depths([1.0, 3.0], 0.0).unwrap();
        assert_eq!((r.z_min, r.z_max), (1.0, 3.0));
        let r = depth_range_from_depths([1.0, 3.0], 0.1).unwrap();
        assert_relative_eq!(r.z_min, 0.8, epsilon = 1e-15);
        assert_relative_eq!(r.z_max, 3.2, epsilon = 1e-15);
        let r = depth_range_from_depths([2.0], 0.0).unwrap();
        assert!(r.z_min < 2.0 && 2.0 < r.z_max);
        assert_eq!(depth_range_from_depths([], 0.05), Err(CameraError::NoVisiblePoints));
    }

    #[test]
    fn estimate_depth_range_skips_culled() {
        let mut kp = KeypointSet::empty(crate::kinematics::Arm::Left);
        kp.arm_points = vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 0.0, -5.0)];
        kp.ee_point = Vector3::new(0.0, 0.0, 3.0);
        let r = estimate_depth_range([&kp], &cam(500.0), 0.0).unwrap();
        assert_eq!((r.z_min, r.z_max), (1.0, 3.0));
        let mut behind = KeypointSet::empty(crate::kinematics::Arm::Left);
        behind.ee_point = Vector3::new(0.0, 0.0, -1.0);
        assert_eq!(
            estimate_depth_range([&behind], &cam(500.0), 0.05),
            Err(CameraError::NoVisiblePoints)
        );
    }

    fn canonical(len: f64) -> [Vector3<f64>; 4] {
        [Vector3::zeros(), Vector3::x() * len, Vector3::y() * len, Vector3::z() * len]
    }

    #[test]
    fn pnp_recovers_canonical_pose() {
        let k = CameraModel::intrinsics(500.0, 500.0, 320.0, 240.0);
        let truth = Rigid::new(rpy_to_matrix([2.4, -0.6, 1.9]), Vector3::new(0.05, -0.1, 0.9));
        let corr: Vec<_> = canonical(0.1)
            .iter()
            .map(|p| {
                let proj = project_camera_point(&truth.transform_point(p), &k);
                (*p, proj.pixel)
            })
            .collect();
        let sol = solve_pnp(&corr, &k).unwrap();
        assert!(sol.converged);
        assert!((sol.translation - truth.translation).norm() < 1e-6);
        assert!((sol.rotation - truth.rotation).norm() < 1e-6);
    }

    #[test]
    fn pnp_rejects_collinear_and_short_inputs() {
        let k = CameraModel::intrinsics(500.0, 500.0, 320.0, 240.0);
        let line: Vec<_> = (0..4)
            .map(|i| (Vector3::new(i as f64 * 0.1, 0.0, 0.0), Vector2::new(100.0 + i as f64, 50.0)))
            .collect();
        assert_eq!(solve_pnp(&line, &k), Err(PnpError::Degenerate));
        assert_eq!(solve_pnp(&line[..3], &k), Err(PnpError::NotEnoughPoints(3)));
    }

    #[test]
    fn camera_to_world_cases() {
        let pose = Rigid::new(rpy_to_matrix([0.1, 0.2, 0.3]), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(camera_to_world(&pose, &Matrix4::identity()).unwrap(), pose);

        let shift = Rigid::from_translation(Vector3::new(0.5, -0.25, 2.0));
        let w = camera_to_world(&pose, &shift.to_homogeneous()).unwrap();
        assert_relative_eq!(w.translation, pose.translation - shift.translation, epsilon = 1e-15);

        let e = Rigid::new(rpy_to_matrix([-0.7, 0.4, 2.2]), Vector3::new(0.3, 0.1, -0.4));
        let world = Rigid::new(rpy_to_matrix([1.0, -0.2, 0.5]), Vector3::new(0.2, 0.4, 1.5));
        let back = camera_to_world(&(e * world), &e.to_homogeneous()).unwrap();
        assert_relative_eq!(back.translation, world.translation, epsilon = 1e-12);
        assert_relative_eq!(back.rotation, world.rotation, epsilon = 1e-12);

        let mut singular = Matrix4::identity();
        singular[(0, 0)] = 0.0;
        assert_eq!(camera_to_world(&pose, &singular), Err(CameraError::NonInvertibleExtrinsic));
    }

    #[test]
    fn camera_json_is_row_major() {
        let c = CameraModel::look_at(
            Vector3::new(0.0, 0.2, 0.75),
            Vector3::new(0.0, 0.85, 0.3),
            Vector3::x(),
            CameraModel::intrinsics(500.0, 500.0, 320.0, 240.0),
            640,
            480,
        )
        .unwrap();
        let text = serde_json::to_string(&c).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["K"][2].as_f64().unwrap(), 320.0);
        assert_eq!(v["E"][3].as_f64().unwrap(), c.e[(0, 3)]);
        let back: CameraModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<CameraModel>(r#"{"K":[1],"E":[],"width":1,"height":1}"#).is_err());
    }
}
