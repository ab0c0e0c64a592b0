//! Heuristic action recovery from KVAF frames.
//!
//! Per frame: find end-effector heatmaps, read the three pose-axis tips and
//! the white finger extent around each, solve PnP on the four canonical
//! points and lift the pose to the world frame. Over the episode: split
//! detections into left/right tracks, fill gaps, median-smooth, normalize
//! the gripper curve and difference consecutive poses into actions.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{camera_to_world, solve_pnp, CameraError, CameraModel, PnpError};
use crate::episode::Episode;
use crate::kinematics::Arm;
use crate::render::{KvafFrame, RenderConfig};
use crate::transform::{matrix_to_quat, matrix_to_rpy, quat_to_matrix, Rigid};

#[derive(Debug, Error, PartialEq)]
pub enum RecoveryError {
    #[error("{0} track has no detections to fill from")]
    EmptyTrack(Arm),
    #[error("length mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("need at least 2 frames, got {0}")]
    TooShort(usize),
}

/// Why a detection did not yield a pose.
#[derive(Debug, Error, PartialEq)]
pub enum SkipReason {
    #[error("axis tip {0} not found")]
    MissingAxis(usize),
    #[error(transparent)]
    Pnp(#[from] PnpError),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// Detection thresholds matched to [`RenderConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    /// Minimum heatmap value for a pixel to seed a component.
    pub heat_threshold: f64,
    /// Minimum heatmap value used in the sub-pixel peak fit.
    pub fit_floor: f64,
    /// Radius around the coarse center used by the peak fit, pixels.
    pub fit_radius: f64,
    /// Heatmap standard deviation the renderer used, pixels.
    pub sigma: f64,
    /// Components below this confidence are dropped.
    pub min_confidence: f64,
    /// Channel level counted as saturated for axes and fingers.
    pub on_level: f64,
    /// Channel level counted as off for pure-primary axes.
    pub off_level: f64,
    /// Axis tips are searched within this radius of a center, pixels.
    pub search_radius: f64,
    /// An axis component must come this close to the center, pixels.
    pub attach_radius: f64,
    /// White finger pixels are collected within this radius, pixels.
    pub gripper_radius: f64,
    /// Line thickness the renderer used, pixels.
    pub line_thickness: u32,
    pub max_detections: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self::matched(&RenderConfig::default())
    }
}

impl DetectConfig {
    /// Thresholds scaled to a render configuration.
    pub fn matched(cfg: &RenderConfig) -> Self {
        Self {
            heat_threshold: 0.45,
            fit_floor: 0.05,
            fit_radius: cfg.radius,
            sigma: cfg.sigma,
            min_confidence: 0.05,
            on_level: 0.99,
            off_level: 0.01,
            search_radius: 200.0,
            attach_radius: 2.0 * cfg.line_thickness as f64 + 6.0,
            gripper_radius: 100.0,
            line_thickness: cfg.line_thickness,
            max_detections: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub center: [f64; 2],
    /// `u_x`, `u_y`, `u_z`.
    pub axis_tips: [Option<[f64; 2]>; 3],
    /// Tip-to-tip finger extent, pixels.
    pub gripper_separation: Option<f64>,
    /// Image direction of the finger extent (unit vector).
    pub gripper_direction: Option<[f64; 2]>,
    /// Heatmap component mass relative to a full unoccluded heatmap, capped at 1.
    pub confidence: f64,
}

fn v2(p: [f64; 2]) -> Vector2<f64> {
    Vector2::new(p[0], p[1])
}

/// Heatmap value at a pixel: `min(R, B)` unless the pixel is white.
#[inline]
fn heat_value(rgb: [f64; 3], on: f64) -> f64 {
    if rgb[1] >= on {
        0.0
    } else {
        rgb[0].min(rgb[2])
    }
}

/// A pixel the heatmap alone determines: over black (or a darker layer) the
/// red and blue channels hold the same value.
#[inline]
fn clean_heat(rgb: [f64; 3], on: f64) -> Option<f64> {
    (rgb[0] == rgb[2] && rgb[1] < on && rgb[0] > 0.0).then_some(rgb[0])
}

#[inline]
fn primary(rgb: [f64; 3], cfg: &DetectConfig) -> Option<usize> {
    (0..3).find(|&c| rgb[c] >= cfg.on_level && (0..3).all(|o| o == c || rgb[o] <= cfg.off_level))
}

#[inline]
fn is_white(rgb: [f64; 3], cfg: &DetectConfig) -> bool {
    rgb.iter().all(|&v| v >= cfg.on_level)
}

/// 8-connected components of `mask` over a `w × h` grid, in scan order.
pub fn connected_components(w: usize, h: usize, mask: &[bool]) -> Vec<Vec<(usize, usize)>> {
    let mut label = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask[start] || label[start] {
            continue;
        }
        label[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            comp.push((x, y));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !label[j] {
                        label[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        comp.sort_unstable_by_key(|&(x, y)| (y, x));
        out.push(comp);
    }
    out
}

/// Finds up to `max_detections` end-effectors, most confident first.
///
/// Heatmap pixels and pure-primary axis pixels are grouped together so axes
/// drawn across a heatmap do not split it. Each group with heatmap mass gives
/// one center: the intensity-weighted centroid of its unoccluded heatmap
/// pixels, refined by a weighted least-squares fit of `ln h` to a quadratic
/// in `(x, y)`.
pub fn detect_endpoints(frame: &KvafFrame, cfg: &DetectConfig) -> Vec<Detection> {
    let (w, h) = (frame.width(), frame.height());
    let mut mask = vec![false; w * h];
    let mut heat = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let rgb = frame.get(x, y);
            let hv = heat_value(rgb, cfg.on_level);
            heat[y * w + x] = hv;
            mask[y * w + x] = hv >= cfg.heat_threshold || primary(rgb, cfg).is_some();
        }
    }
    let full_mass = 2.0 * std::f64::consts::PI * cfg.sigma * cfg.sigma * (1.0 - cfg.heat_threshold);

    let mut found: Vec<(f64, Vector2<f64>)> = Vec::new();
    for comp in connected_components(w, h, &mask) {
        let (mut mass, mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0, 0.0);
        for &(x, y) in &comp {
            let hv = heat[y * w + x];
            if hv >= cfg.heat_threshold {
                mass += hv;
            }
            if let Some(c) = clean_heat(frame.get(x, y), cfg.on_level).filter(|&c| c >= cfg.heat_threshold) {
                sx += c * x as f64;
                sy += c * y as f64;
                sw += c;
            }
        }
        let confidence = (mass / full_mass).min(1.0);
        if sw == 0.0 || confidence < cfg.min_confidence {
            continue;
        }
        let coarse = Vector2::new(sx / sw, sy / sw);
        found.push((confidence, refine_peak(frame, coarse, cfg).unwrap_or(coarse)));
    }
    found.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.x.total_cmp(&b.1.x)).then(a.1.y.total_cmp(&b.1.y)));
    found.truncate(cfg.max_detections);

    found
        .into_iter()
        .map(|(confidence, center)| {
            let axis_tips = [0, 1, 2].map(|m| find_axis_tip(frame, center, m, cfg));
            let gripper = finger_extent(frame, center, cfg);
            Detection {
                center: [center.x, center.y],
                axis_tips,
                gripper_separation: gripper.map(|g| g.0),
                gripper_direction: gripper.map(|g| [g.1.x, g.1.y]),
                confidence,
            }
        })
        .collect()
}

/// Fits `ln h = a(x² + y²) + bx + cy + d` with weights `h²` over unoccluded
/// heatmap pixels; the peak is at `(−b, −c) / 2a`.
fn refine_peak(frame: &KvafFrame, coarse: Vector2<f64>, cfg: &DetectConfig) -> Option<Vector2<f64>> {
    let r = cfg.fit_radius;
    let x0 = (coarse.x - r).floor().max(0.0) as usize;
    let y0 = (coarse.y - r).floor().max(0.0) as usize;
    let x1 = ((coarse.x + r).ceil() as usize).min(frame.width() - 1);
    let y1 = ((coarse.y + r).ceil() as usize).min(frame.height() - 1);
    let mut ata = nalgebra::Matrix4::<f64>::zeros();
    let mut atb = nalgebra::Vector4::<f64>::zeros();
    let mut n = 0;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 - coarse.x, y as f64 - coarse.y);
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let Some(hv) = clean_heat(frame.get(x, y), cfg.on_level).filter(|&v| v >= cfg.fit_floor) else {
                continue;
            };
            let row = nalgebra::Vector4::new(dx * dx + dy * dy, dx, dy, 1.0);
            let wgt = hv * hv;
            ata += row * row.transpose() * wgt;
            atb += row * (hv.ln() * wgt);
            n += 1;
        }
    }
    if n < 6 {
        return None;
    }
    let sol = ata.cholesky()?.solve(&atb);
    if !(sol[0] < 0.0) {
        return None;
    }
    let peak = coarse + Vector2::new(-sol[1], -sol[2]) / (2.0 * sol[0]);
    ((peak - coarse).norm() <= cfg.sigma).then_some(peak)
}

/// Farthest saturated pixel of the color-`m` component attached to `center`,
/// pulled back by half the brush so it estimates the segment endpoint.
fn find_axis_tip(frame: &KvafFrame, center: Vector2<f64>, m: usize, cfg: &DetectConfig) -> Option<[f64; 2]> {
    let r = cfg.search_radius;
    let x0 = (center.x - r).floor().max(0.0) as usize;
    let y0 = (center.y - r).floor().max(0.0) as usize;
    let x1 = ((center.x + r).ceil().max(0.0) as usize).min(frame.width() - 1);
    let y1 = ((center.y + r).ceil().max(0.0) as usize).min(frame.height() - 1);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut mask = vec![false; w * h];
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = Vector2::new(x as f64, y as f64) - center;
            mask[(y - y0) * w + (x - x0)] = d.norm() <= r && primary(frame.get(x, y), cfg) == Some(m);
        }
    }
    let dist = |&(x, y): &(usize, usize)| (Vector2::new((x + x0) as f64, (y + y0) as f64) - center).norm();
    let comp = connected_components(w, h, &mask)
        .into_iter()
        .map(|c| (c.iter().map(dist).fold(f64::INFINITY, f64::min), c))
        .filter(|(near, _)| *near <= cfg.attach_radius)
        .min_by(|a, b| a.0.total_cmp(&b.0))?
        .1;
    let far = comp.iter().copied().max_by(|a, b| dist(a).total_cmp(&dist(b)))?;
    let far = Vector2::new((far.0 + x0) as f64, (far.1 + y0) as f64);
    let half = (cfg.line_thickness.max(1) - 1) as f64 / 2.0;
    let d = far - center;
    let tip = Vector2::new(
        far.x - half * d.x.signum() * (d.x != 0.0) as u8 as f64,
        far.y - half * d.y.signum() * (d.y != 0.0) as u8 as f64,
    );
    Some([
        tip.x.clamp(0.0, frame.width() as f64 - 1.0),
        tip.y.clamp(0.0, frame.height() as f64 - 1.0),
    ])
}

/// Largest distance between white pixels near `center`, less the brush
/// footprint, and its image direction.
fn finger_extent(frame: &KvafFrame, center: Vector2<f64>, cfg: &DetectConfig) -> Option<(f64, Vector2<f64>)> {
    let r = cfg.gripper_radius;
    let x0 = (center.x - r).floor().max(0.0) as usize;
    let y0 = (center.y - r).floor().max(0.0) as usize;
    let x1 = ((center.x + r).ceil().max(0.0) as usize).min(frame.width() - 1);
    let y1 = ((center.y + r).ceil().max(0.0) as usize).min(frame.height() - 1);
    let mut pts = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = Vector2::new(x as f64, y as f64);
            if (p - center).norm() <= r && is_white(frame.get(x, y), cfg) {
                pts.push(p);
            }
        }
    }
    if pts.len() < 2 {
        return None;
    }
    let mut best = (0.0, Vector2::x());
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            let d = b - a;
            let n = d.norm();
            if n > best.0 {
                best = (n, d / n);
            }
        }
    }
    let brush = (cfg.line_thickness.max(1) - 1) as f64 * (best.1.x.abs() + best.1.y.abs());
    let dir = if best.1.x < 0.0 || (best.1.x == 0.0 && best.1.y < 0.0) {
        -best.1
    } else {
        best.1
    };
    Some(((best.0 - brush).max(0.0), dir))
}

/// A world-frame end-effector pose recovered from one detection.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseObservation {
    pub pose: Rigid,
    /// Finger extent converted to meters along the finger direction, if seen.
    pub gripper_raw: Option<f64>,
    pub reprojection_rmse: f64,
}

/// PnP on `o_0 = 0`, `o_m = ℓ·e_m` against `u_0, u_x, u_y, u_z`, then `E⁻¹`.
pub fn recover_pose(det: &Detection, cam: &CameraModel, axis_length: f64) -> Result<PoseObservation, SkipReason> {
    let mut corr = vec![(Vector3::zeros(), v2(det.center))];
    for (m, tip) in det.axis_tips.iter().enumerate() {
        let tip = tip.ok_or(SkipReason::MissingAxis(m))?;
        let mut o = Vector3::zeros();
        o[m] = axis_length;
        corr.push((o, v2(tip)));
    }
    let sol = solve_pnp(&corr, &cam.k)?;
    let pose_cam = sol.pose();
    let pose = camera_to_world(&pose_cam, &cam.e)?;
    let gripper_raw = det.gripper_separation.and_then(|sep| {
        let ppm = pixels_per_meter(&cam.k, &pose_cam, det.gripper_direction.map(v2))?;
        Some(sep / ppm)
    });
    Ok(PoseObservation {
        pose,
        gripper_raw,
        reprojection_rmse: sol.reprojection_rmse,
    })
}

/// Image-space length of a 1 m step at the end-effector along the local axis
/// whose projection best matches `dir`.
fn pixels_per_meter(k: &Matrix3<f64>, pose_cam: &Rigid, dir: Option<Vector2<f64>>) -> Option<f64> {
    let p = pose_cam.translation;
    if p.z <= 0.0 {
        return None;
    }
    let u = (k * p) / p.z;
    let jac = |v: Vector3<f64>| {
        let du = (k.row(0).transpose() - Vector3::z() * u.x).dot(&v) / p.z;
        let dv = (k.row(1).transpose() - Vector3::z() * u.y).dot(&v) / p.z;
        Vector2::new(du, dv)
    };
    let axes = [0, 1, 2].map(|m| jac(pose_cam.rotation.column(m).into_owned()));
    let pick = match dir {
        Some(d) => axes.iter().copied().max_by(|a, b| (a.dot(&d).abs()).total_cmp(&b.dot(&d).abs()))?,
        None => axes[0],
    };
    let n = pick.norm();
    (n > 1e-9).then_some(n)
}

/// One arm's observations over an episode, before filling.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredTrack {
    pub arm: Arm,
    pub frames: Vec<Option<TrackSample>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSample {
    pub position: Vector3<f64>,
    /// `(w, x, y, z)`.
    pub quat: [f64; 4],
    pub gripper_raw: Option<f64>,
}

impl From<&PoseObservation> for TrackSample {
    fn from(o: &PoseObservation) -> Self {
        Self {
            position: o.pose.translation,
            quat: matrix_to_quat(&o.pose.rotation),
            gripper_raw: o.gripper_raw,
        }
    }
}

impl RecoveredTrack {
    pub fn present(&self) -> usize {
        self.frames.iter().filter(|f| f.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoveryConfig {
    /// World axis used to order two simultaneous detections (0 = x).
    pub horizontal_axis: usize,
    /// A lone detection farther than this (meters) from the only existing
    /// track starts the other track instead.
    pub new_track_distance: f64,
    pub median_window: usize,
    pub axis_length: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            horizontal_axis: 0,
            new_track_distance: 0.15,
            median_window: 5,
            axis_length: RenderConfig::default().axis_length,
        }
    }
}

/// Splits per-frame observations into left and right tracks.
///
/// Two observations: the smaller horizontal coordinate is left. One: it joins
/// the track whose last known position is nearest (left on ties); when only
/// one track has history and the observation is beyond
/// `new_track_distance`, it starts the other track on the side given by the
/// horizontal order. More than two: the two first in input order are used.
pub fn associate_tracks(per_frame: &[Vec<PoseObservation>], cfg: &RecoveryConfig) -> (RecoveredTrack, RecoveredTrack) {
    let mut left = RecoveredTrack {
        arm: Arm::Left,
        frames: Vec::with_capacity(per_frame.len()),
    };
    let mut right = RecoveredTrack {
        arm: Arm::Right,
        frames: Vec::with_capacity(per_frame.len()),
    };
    let mut last: [Option<Vector3<f64>>; 2] = [None, None];
    let key = |o: &PoseObservation| {
        let p = o.pose.translation;
        let a = cfg.horizontal_axis.min(2);
        [p[a], p[(a + 1) % 3], p[(a + 2) % 3]]
    };
    for obs in per_frame {
        let mut slots: [Option<TrackSample>; 2] = [None, None];
        match obs.as_slice() {
            [] => {}
            [o] => {
                let p = o.pose.translation;
                let d = last.map(|l| l.map_or(f64::INFINITY, |l| (l - p).norm()));
                let side = match last {
                    [Some(_), None] if d[0] > cfg.new_track_distance => {
                        if key(o) > key_of(last[0].unwrap(), cfg) {
                            1
                        } else {
                            0
                        }
                    }
                    [None, Some(_)] if d[1] > cfg.new_track_distance => {
                        if key(o) < key_of(last[1].unwrap(), cfg) {
                            0
                        } else {
                            1
                        }
                    }
                    _ => usize::from(d[1] < d[0]),
                };
                slots[side] = Some(o.into());
            }
            [a, b, ..] => {
                let (l, r) = if key(a) <= key(b) { (a, b) } else { (b, a) };
                slots = [Some(l.into()), Some(r.into())];
            }
        }
        for (i, s) in slots.iter().enumerate() {
            if let Some(s) = s {
                last[i] = Some(s.position);
            }
        }
        left.frames.push(slots[0]);
        right.frames.push(slots[1]);
    }
    (left, right)
}

fn key_of(p: Vector3<f64>, cfg: &RecoveryConfig) -> [f64; 3] {
    let a = cfg.horizontal_axis.min(2);
    [p[a], p[(a + 1) % 3], p[(a + 2) % 3]]
}

/// Gap-free, smoothed track with the gripper normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrack {
    pub arm: Arm,
    pub positions: Vec<Vector3<f64>>,
    pub quats: Vec<[f64; 4]>,
    pub gripper: Vec<f64>,
}

impl DenseTrack {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn rotation(&self, t: usize) -> Matrix3<f64> {
        quat_to_matrix(self.quats[t])
    }
}

/// Index of the nearest `present` frame to each frame; earlier wins ties.
fn nearest_present(present: &[bool]) -> Option<Vec<usize>> {
    let n = present.len();
    if !present.iter().any(|&p| p) {
        return None;
    }
    let mut prev = vec![None; n];
    let mut next = vec![None; n];
    let mut last = None;
    for i in 0..n {
        if present[i] {
            last = Some(i);
        }
        prev[i] = last;
    }
    last = None;
    for i in (0..n).rev() {
        if present[i] {
            last = Some(i);
        }
        next[i] = last;
    }
    Some(
        (0..n)
            .map(|i| match (prev[i], next[i]) {
                (Some(p), Some(q)) => {
                    if i - p <= q - i {
                        p
                    } else {
                        q
                    }
                }
                (Some(p), None) => p,
                (None, Some(q)) => q,
                (None, None) => unreachable!(),
            })
            .collect(),
    )
}

/// Median of `values[t−k..=t+k]` with indices clamped to the ends.
pub fn median_filter(values: &[f64], window: usize) -> Vec<f64> {
    let k = window.max(1) / 2;
    let n = values.len();
    let mut buf = Vec::with_capacity(2 * k + 1);
    (0..n)
        .map(|t| {
            buf.clear();
            for o in 0..=2 * k {
                let i = (t + o).saturating_sub(k).min(n - 1);
                buf.push(values[i]);
            }
            buf.sort_by(f64::total_cmp);
            buf[k]
        })
        .collect()
}

/// Fills gaps from the nearest present frame, median-filters positions,
/// sign-aligned quaternions and the gripper, then min-max normalizes the
/// gripper (a constant curve becomes 0.5). Frames with a pose but no
/// gripper reading take the nearest gripper reading; a track without any
/// gripper reading is constant 0.5.
pub fn fill_and_smooth(track: &RecoveredTrack, median_window: usize) -> Result<DenseTrack, RecoveryError> {
    let present: Vec<bool> = track.frames.iter().map(Option::is_some).collect();
    let src = nearest_present(&present).ok_or(RecoveryError::EmptyTrack(track.arm))?;
    let samples: Vec<TrackSample> = src.iter().map(|&i| track.frames[i].unwrap()).collect();

    let grip_present: Vec<bool> = track.frames.iter().map(|f| f.is_some_and(|s| s.gripper_raw.is_some())).collect();
    let raw_grip: Vec<f64> = match nearest_present(&grip_present) {
        Some(gsrc) => gsrc.iter().map(|&i| track.frames[i].unwrap().gripper_raw.unwrap()).collect(),
        None => vec![0.0; samples.len()],
    };

    let mut quats: Vec<[f64; 4]> = Vec::with_capacity(samples.len());
    for s in &samples {
        let mut q = s.quat;
        if let Some(prev) = quats.last() {
            if (0..4).map(|i| q[i] * prev[i]).sum::<f64>() < 0.0 {
                q = q.map(|v| -v);
            }
        }
        quats.push(q);
    }

    let window = median_window.max(1);
    let smooth = |f: &dyn Fn(usize) -> f64| median_filter(&(0..samples.len()).map(f).collect::<Vec<_>>(), window);
    let pos: Vec<Vec<f64>> = (0..3).map(|c| smooth(&|t| samples[t].position[c])).collect();
    let qc: Vec<Vec<f64>> = (0..4).map(|c| smooth(&|t| quats[t][c])).collect();
    let grip = median_filter(&raw_grip, window);

    let positions = (0..samples.len()).map(|t| Vector3::new(pos[0][t], pos[1][t], pos[2][t])).collect();
    let quats = (0..samples.len())
        .map(|t| {
            let q = [qc[0][t], qc[1][t], qc[2][t], qc[3][t]];
            if window == 1 {
                q
            } else {
                let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                q.map(|v| v / n)
            }
        })
        .collect();
    Ok(DenseTrack {
        arm: track.arm,
        positions,
        quats,
        gripper: normalize_gripper(&grip),
    })
}

/// Min-max normalization to `[0, 1]`; zero range maps to 0.5.
pub fn normalize_gripper(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; raw.len()];
    }
    raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Action columns in CSV order.
pub const ACTION_COLUMNS: [&str; 14] = [
    "l_dx", "l_dy", "l_dz", "l_droll", "l_dpitch", "l_dyaw", "l_dg", "r_dx", "r_dy", "r_dz", "r_droll", "r_dpitch", "r_dyaw", "r_dg",
];

/// `â_t = [Δp^L, Δθ^L, Δg^L, Δp^R, Δθ^R, Δg^R]` for `t = 0..T−1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActionSequence {
    pub actions: Vec<[f64; 14]>,
}

impl ActionSequence {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Relative motion between consecutive poses, expressed in the current
/// end-effector frame: `Δp = Rᵀ_t (p_{t+1} − p_t)`, `Δθ = rpy(Rᵀ_t R_{t+1})`.
pub fn relative_action(p0: &Vector3<f64>, r0: &Matrix3<f64>, p1: &Vector3<f64>, r1: &Matrix3<f64>) -> ([f64; 3], [f64; 3]) {
    let dp = r0.transpose() * (p1 - p0);
    let rpy = matrix_to_rpy(&(r0.transpose() * r1));
    ([dp.x, dp.y, dp.z], rpy)
}

fn push_arm(row: &mut [f64; 14], offset: usize, dp: [f64; 3], dth: [f64; 3], dg: f64) {
    row[offset..offset + 3].copy_from_slice(&dp);
    row[offset + 3..offset + 6].copy_from_slice(&dth);
    row[offset + 6] = dg;
}

pub fn to_relative_actions(left: &DenseTrack, right: &DenseTrack) -> Result<ActionSequence, RecoveryError> {
    if left.len() != right.len() {
        return Err(RecoveryError::Dimension(left.len(), right.len()));
    }
    if left.len() < 2 {
        return Err(RecoveryError::TooShort(left.len()));
    }
    let actions = (0..left.len() - 1)
        .map(|t| {
            let mut row = [0.0; 14];
            for (offset, tr) in [(0, left), (7, right)] {
                let (dp, dth) = relative_action(&tr.positions[t], &tr.rotation(t), &tr.positions[t + 1], &tr.rotation(t + 1));
                push_arm(&mut row, offset, dp, dth, tr.gripper[t + 1] - tr.gripper[t]);
            }
            row
        })
        .collect();
    Ok(ActionSequence { actions })
}

/// Ground-truth actions from the episode's `ξ_t` and `g_t`.
pub fn ground_truth_actions(episode: &Episode) -> Result<ActionSequence, RecoveryError> {
    if episode.len() < 2 {
        return Err(RecoveryError::TooShort(episode.len()));
    }
    let actions = episode
        .states
        .windows(2)
        .map(|w| {
            let mut row = [0.0; 14];
            for (offset, arm) in [(0, Arm::Left), (7, Arm::Right)] {
                let (a, b) = (w[0].arm(arm), w[1].arm(arm));
                let (pa, pb) = (a.ee_pose(), b.ee_pose());
                let (dp, dth) = relative_action(&pa.translation, &pa.rotation, &pb.translation, &pb.rotation);
                push_arm(&mut row, offset, dp, dth, b.g - a.g);
            }
            row
        })
        .collect();
    Ok(ActionSequence { actions })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub translation_error: f64,
    pub rotation_error: f64,
    pub gripper_error: f64,
    pub detection_rate: f64,
}

/// Group-wise mean errors over timesteps and both arms: `‖Δp̂ − Δp‖₂`,
/// `‖Δθ̂ − Δθ‖₂` and `|Δĝ − Δg|`.
pub fn evaluate_recovery(recovered: &ActionSequence, truth: &ActionSequence, detection_rate: f64) -> Result<RecoveryReport, RecoveryError> {
    if recovered.len() != truth.len() {
        return Err(RecoveryError::Dimension(recovered.len(), truth.len()));
    }
    let n = (2 * recovered.len()).max(1) as f64;
    let (mut et, mut er, mut eg) = (0.0, 0.0, 0.0);
    for (a, b) in recovered.actions.iter().zip(&truth.actions) {
        for o in [0, 7] {
            let norm = |r: std::ops::Range<usize>| r.map(|i| (a[o + i] - b[o + i]).powi(2)).sum::<f64>().sqrt();
            et += norm(0..3);
            er += norm(3..6);
            eg += (a[o + 6] - b[o + 6]).abs();
        }
    }
    Ok(RecoveryReport {
        translation_error: et / n,
        rotation_error: er / n,
        gripper_error: eg / n,
        detection_rate,
    })
}

/// Detects and recovers every end-effector pose in one frame. Detections
/// whose pose cannot be recovered are dropped.
pub fn observe_frame(frame: &KvafFrame, cam: &CameraModel, detect: &DetectConfig, axis_length: f64) -> Vec<PoseObservation> {
    detect_endpoints(frame, detect)
        .iter()
        .filter_map(|d| recover_pose(d, cam, axis_length).ok())
        .collect()
}

#[derive(Debug, Clone)]
pub struct Recovery {
    pub left: DenseTrack,
    pub right: DenseTrack,
    pub actions: ActionSequence,
    /// Fraction of (frame, arm) slots with a recovered pose before filling.
    pub detection_rate: f64,
}

/// Association, filling, smoothing and differencing over per-frame observations.
pub fn recover_from_observations(per_frame: &[Vec<PoseObservation>], cfg: &RecoveryConfig) -> Result<Recovery, RecoveryError> {
    if per_frame.len() < 2 {
        return Err(RecoveryError::TooShort(per_frame.len()));
    }
    let (l, r) = associate_tracks(per_frame, cfg);
    let detection_rate = (l.present() + r.present()) as f64 / (2 * per_frame.len()) as f64;
    let left = fill_and_smooth(&l, cfg.median_window)?;
    let right = fill_and_smooth(&r, cfg.median_window)?;
    let actions = to_relative_actions(&left, &right)?;
    Ok(Recovery {
        left,
        right,
        actions,
        detection_rate,
    })
}
