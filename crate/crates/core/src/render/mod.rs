//! KVAF rasterization.
//!
//! Layers are composited on a black canvas in a fixed order:
//!
//! 1. depth-colored skeleton segments per arm,
//! 2. joint landmark discs,
//! 3. white finger segments plus a crossbar between finger roots,
//! 4. the end-effector heatmap, max-composited into red and blue (magenta),
//! 5. pose axes in pure red, green and blue, drawn last so recovery can find them.
//!
//! Segments with a culled endpoint are skipped. Anti-aliasing is off so
//! frames are bit-reproducible.

mod frame;
pub mod palette;
pub mod raster;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use frame::{FrameLog, KvafFrame, KvafSequence, ProjectedArm};

use crate::camera::{depth_range_from_depths, normalize_depth, project_point, CameraError, CameraModel, DepthRange};
use crate::episode::{Episode, RobotState};
use crate::kinematics::{extract_keypoints, forward_kinematics_arm, Arm, KeypointSet, KinematicChain, KinematicsError};
use crate::par::{self, Exec};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid render config: {0}")]
    Config(String),
    #[error("episode has no frames")]
    EmptyEpisode,
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    Viridis,
    Grayscale,
}

impl Colormap {
    /// Palette entry for `alpha ∈ [0, 1]`, nearest of 256 levels.
    pub fn color(self, alpha: f64) -> [f64; 3] {
        let i = (alpha.clamp(0.0, 1.0) * 255.0).round() as usize;
        match self {
            Colormap::Viridis => palette::VIRIDIS[i].map(|c| c as f64 / 255.0),
            Colormap::Grayscale => [i as f64 / 255.0; 3],
        }
    }
}

/// Heatmap channels: red and blue.
pub const HEATMAP_CHANNELS: [bool; 3] = [true, false, true];
pub const FINGER_COLOR: [f64; 3] = [1.0, 1.0, 1.0];
pub const AXIS_COLORS: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub width: u32,
    pub height: u32,
    /// Heatmap standard deviation, pixels.
    pub sigma: f64,
    /// Heatmap truncation radius, pixels.
    pub radius: f64,
    /// Pose-axis length, meters.
    pub axis_length: f64,
    pub line_thickness: u32,
    pub landmark_radius: u32,
    pub colormap: Colormap,
    /// Additive RGB bias on skeleton and landmark colors, `[left, right]`.
    pub arm_tint: [[f64; 3]; 2],
    pub finger_crossbar: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            sigma: 6.0,
            radius: 18.0,
            axis_length: 0.1,
            line_thickness: 3,
            landmark_radius: 4,
            colormap: Colormap::Viridis,
            arm_tint: [[0.0, 0.06, 0.0], [0.0, -0.06, 0.0]],
            finger_crossbar: true,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: &str| Err(RenderError::Config(m.into()));
        if !(self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if !(self.radius > 0.0) {
            return bad("radius must be positive");
        }
        if !(self.axis_length > 0.0) {
            return bad("axis_length must be positive");
        }
        if self.line_thickness < 1 {
            return bad("line_thickness must be at least 1");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive");
        }
        if self.arm_tint.iter().flatten().any(|v| !v.is_finite()) {
            return bad("arm_tint must be finite");
        }
        Ok(())
    }

    pub fn canvas(&self) -> KvafFrame {
        KvafFrame::black(self.width as usize, self.height as usize)
    }

    fn tint(&self, arm: Arm) -> [f64; 3] {
        self.arm_tint[arm.index()]
    }
}

/// Max-composites the end-effector heatmap into the heatmap channels.
pub fn gaussian_heatmap(canvas: &mut KvafFrame, center: Vector2<f64>, cfg: &RenderConfig) {
    raster::splat_gaussian(canvas, center, cfg.sigma, cfg.radius, HEATMAP_CHANNELS);
}

/// Segment colored by interpolating `C(α(z₀))` to `C(α(z₁))` in RGB.
pub fn draw_depth_line(canvas: &mut KvafFrame, p0: (Vector2<f64>, f64), p1: (Vector2<f64>, f64), range: &DepthRange, cfg: &RenderConfig) {
    draw_depth_line_tinted(canvas, p0, p1, range, cfg, [0.0; 3]);
}

fn depth_color(z: f64, range: &DepthRange, cfg: &RenderConfig, tint: [f64; 3]) -> [f64; 3] {
    let c = cfg.colormap.color(normalize_depth(z, range));
    [0, 1, 2].map(|i| (c[i] + tint[i]).clamp(0.0, 1.0))
}

fn draw_depth_line_tinted(
    canvas: &mut KvafFrame,
    p0: (Vector2<f64>, f64),
    p1: (Vector2<f64>, f64),
    range: &DepthRange,
    cfg: &RenderConfig,
    tint: [f64; 3],
) {
    let c0 = depth_color(p0.1, range, cfg, tint);
    let c1 = depth_color(p1.1, range, cfg, tint);
    raster::draw_segment(canvas, p0.0, p1.0, cfg.line_thickness, |s| {
        [0, 1, 2].map(|i| c0[i] + (c1[i] - c0[i]) * s)
    });
}

/// End-effector pose and gripper geometry for one arm in one frame.
#[derive(Debug, Clone)]
pub struct ArmScene {
    pub keypoints: KeypointSet,
    pub ee_position: Vector3<f64>,
    pub ee_rotation: nalgebra::Matrix3<f64>,
}

impl ArmScene {
    pub fn from_state(state: &RobotState, keypoints: KeypointSet) -> Self {
        let pose = state.arm(keypoints.arm).ee_pose();
        Self {
            keypoints,
            ee_position: pose.translation,
            ee_rotation: pose.rotation,
        }
    }
}

/// Renders one frame. The heatmap and axes follow the end-effector pose `ξ`
/// in `state`; skeleton, landmarks and fingers follow `keypoints`.
pub fn render_frame(state: &RobotState, keypoints: &[KeypointSet], range: &DepthRange, cfg: &RenderConfig) -> KvafFrame {
    let scenes: Vec<ArmScene> = keypoints.iter().map(|kp| ArmScene::from_state(state, kp.clone())).collect();
    render_scene(&scenes, &state.camera, range, cfg).0
}

pub fn render_scene(scenes: &[ArmScene], cam: &CameraModel, range: &DepthRange, cfg: &RenderConfig) -> (KvafFrame, Vec<ProjectedArm>) {
    let mut canvas = cfg.canvas();
    let proj = |p: &Vector3<f64>| project_point(p, cam).visible();

    for s in scenes {
        let tint = cfg.tint(s.keypoints.arm);
        for w in s.keypoints.arm_points.windows(2) {
            if let (Some(a), Some(b)) = (proj(&w[0]), proj(&w[1])) {
                draw_depth_line_tinted(&mut canvas, a, b, range, cfg, tint);
            }
        }
    }
    for s in scenes {
        let tint = cfg.tint(s.keypoints.arm);
        for (_, p) in &s.keypoints.joint_points {
            if let Some((px, z)) = proj(p) {
                raster::draw_disc(&mut canvas, px, cfg.landmark_radius, depth_color(z, range, cfg, tint));
            }
        }
    }
    for s in scenes {
        let fingers = &s.keypoints.fingers;
        for f in fingers {
            if let (Some(a), Some(b)) = (proj(&f.root), proj(&f.tip)) {
                raster::draw_segment(&mut canvas, a.0, b.0, cfg.line_thickness, |_| FINGER_COLOR);
            }
        }
        if cfg.finger_crossbar {
            for w in fingers.windows(2) {
                if let (Some(a), Some(b)) = (proj(&w[0].root), proj(&w[1].root)) {
                    raster::draw_segment(&mut canvas, a.0, b.0, cfg.line_thickness, |_| FINGER_COLOR);
                }
            }
        }
    }

    let mut log = Vec::with_capacity(scenes.len());
    let centers: Vec<_> = scenes.iter().map(|s| project_point(&s.ee_position, cam)).collect();
    for c in &centers {
        if let Some((px, _)) = c.visible() {
            gaussian_heatmap(&mut canvas, px, cfg);
        }
    }
    for (s, c) in scenes.iter().zip(&centers) {
        let mut tips = [None; 3];
        if let Some((px, _)) = c.visible() {
            for (m, color) in AXIS_COLORS.iter().enumerate() {
                let end = s.ee_position + s.ee_rotation.column(m) * cfg.axis_length;
                if let Some((tip, _)) = proj(&end) {
                    raster::draw_segment(&mut canvas, px, tip, cfg.line_thickness, |_| *color);
                    tips[m] = Some([tip.x, tip.y]);
                }
            }
        }
        log.push(ProjectedArm {
            arm: s.keypoints.arm,
            ee_pixel: c.visible().map(|(p, _)| [p.x, p.y]),
            ee_depth: c.depth,
            axis_tips: tips,
        });
    }
    (canvas, log)
}

/// Per-frame scene construction with an episode-level depth range.
#[derive(Debug, Clone)]
pub struct EpisodeRenderer<'a> {
    pub chain: &'a KinematicChain,
    pub cfg: &'a RenderConfig,
    pub range: DepthRange,
}

impl<'a> EpisodeRenderer<'a> {
    /// Estimates the depth range from every visible keypoint of the episode.
    pub fn new(chain: &'a KinematicChain, episode: &Episode, cfg: &'a RenderConfig, margin: f64) -> Result<Self, RenderError> {
        cfg.validate()?;
        if episode.is_empty() {
            return Err(RenderError::EmptyEpisode);
        }
        let mut depths = Vec::new();
        for state in &episode.states {
            for kp in keypoints_for_state(chain, state)? {
                depths.extend(
                    kp.all_points()
                        .filter_map(|p| project_point(p, &state.camera).visible().map(|(_, z)| z)),
                );
            }
        }
        let range = depth_range_from_depths(depths, margin)?;
        Ok(Self { chain, cfg, range })
    }

    pub fn render(&self, state: &RobotState) -> Result<(KvafFrame, FrameLog), RenderError> {
        let scenes: Vec<ArmScene> = keypoints_for_state(self.chain, state)?
            .into_iter()
            .map(|kp| ArmScene::from_state(state, kp))
            .collect();
        let (frame, arms) = render_scene(&scenes, &state.camera, &self.range, self.cfg);
        Ok((frame, FrameLog { t: state.t, arms }))
    }
}

/// Forward kinematics and keypoints for every arm in the chain.
pub fn keypoints_for_state(chain: &KinematicChain, state: &RobotState) -> Result<Vec<KeypointSet>, KinematicsError> {
    chain
        .arms
        .iter()
        .map(|arm| {
            let a = state.arm(arm.arm);
            let poses = forward_kinematics_arm(arm, &a.q)?;
            Ok(extract_keypoints(&poses, arm, a.g))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RenderedEpisode {
    pub sequence: KvafSequence,
    pub range: DepthRange,
    pub logs: Vec<FrameLog>,
}

pub fn render_episode(episode: &Episode, chain: &KinematicChain, cfg: &RenderConfig) -> Result<RenderedEpisode, RenderError> {
    render_episode_with(episode, chain, cfg, crate::camera::DEFAULT_DEPTH_MARGIN, Exec::default())
}

/// Frames are independent and rendered with `exec`; output order is frame order.
pub fn render_episode_with(
    episode: &Episode,
    chain: &KinematicChain,
    cfg: &RenderConfig,
    margin: f64,
    exec: Exec,
) -> Result<RenderedEpisode, RenderError> {
    let renderer = EpisodeRenderer::new(chain, episode, cfg, margin)?;
    let rendered = par::map(exec, &episode.states, |s| renderer.render(s));
    let mut sequence = KvafSequence::default();
    let mut logs = Vec::with_capacity(rendered.len());
    for r in rendered {
        let (frame, log) = r?;
        sequence.frames.push(frame);
        logs.push(log);
    }
    Ok(RenderedEpisode {
        sequence,
        range: renderer.range,
        logs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraModel;
    use crate::episode::ArmState;
    use nalgebra::{Matrix3, Matrix4};

    fn axis_camera() -> CameraModel {
        CameraModel::new(CameraModel::intrinsics(500.0, 500.0, 320.0, 240.0), Matrix4::identity(), 640, 480).unwrap()
    }

    fn state_at(position: Vector3<f64>, quat: [f64; 4]) -> RobotState {
        let arm = ArmState {
            q: vec![],
            g: 0.0,
            position,
            quat,
        };
        RobotState {
            t: 0,
            left: arm.clone(),
            right: arm,
            camera: axis_camera(),
        }
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(Colormap::Viridis.color(0.0), palette::VIRIDIS[0].map(|c| c as f64 / 255.0));
        assert_eq!(Colormap::Viridis.color(1.0), palette::VIRIDIS[255].map(|c| c as f64 / 255.0));
        assert_eq!(Colormap::Grayscale.color(0.5), [128.0 / 255.0; 3]);
    }

    #[test]
    fn constant_depth_segment_uses_single_color() {
        let cfg = RenderConfig::default();
        let range = DepthRange::new(1.0, 2.0).unwrap();
        let mut f = cfg.canvas();
        draw_depth_line(
            &mut f,
            (Vector2::new(10.0, 10.0), 1.0),
            (Vector2::new(90.0, 60.0), 1.0),
            &range,
            &cfg,
        );
        let c0 = Colormap::Viridis.color(0.0);
        let lit: Vec<_> = f.non_black_pixels().collect();
        assert!(!lit.is_empty());
        assert!(lit.iter().all(|&(x, y)| f.get(x, y) == c0));
    }

    #[test]
    fn empty_and_culled_scenes_are_black() {
        let cfg = RenderConfig::default();
        let range = DepthRange::new(1.0, 2.0).unwrap();
        let s = state_at(Vector3::new(0.0, 0.0, 1.0), [1.0, 0.0, 0.0, 0.0]);
        assert!(render_frame(&s, &[], &range, &cfg).is_black());

        let behind = state_at(Vector3::new(0.0, 0.0, -1.0), [1.0, 0.0, 0.0, 0.0]);
        let mut kp = KeypointSet::empty(Arm::Left);
        kp.arm_points = vec![Vector3::new(0.0, 0.0, -1.0), Vector3::new(0.1, 0.0, -2.0)];
        kp.ee_point = Vector3::new(0.0, 0.0, -1.0);
        let mut kp_r = kp.clone();
        kp_r.arm = Arm::Right;
        assert!(render_frame(&behind, &[kp, kp_r], &range, &cfg).is_black());
    }

    #[test]
    fn red_axis_points_along_image_x() {
        let cfg = RenderConfig::default();
        let range = DepthRange::new(0.5, 1.5).unwrap();
        let s = state_at(Vector3::new(0.0, 0.0, 1.0), [1.0, 0.0, 0.0, 0.0]);
        let mut kp = KeypointSet::empty(Arm::Left);
        kp.ee_point = s.left.position;
        let f = render_frame(&s, &[kp], &range, &cfg);
        let tip = project_point(&Vector3::new(cfg.axis_length, 0.0, 1.0), &s.camera).pixel;
        assert_eq!(tip, Vector2::new(370.0, 240.0));
        // z axis points straight at the optical axis, so the last-drawn blue
        // segment collapses to the brush around the center
        assert_eq!(f.get(370, 239), [1.0, 0.0, 0.0]);
        assert_eq!(f.get(371, 240), [1.0, 0.0, 0.0]);
        assert_eq!(f.get(372, 240)[1], 0.0);
        assert!(f.get(372, 240)[0] < 1.0);
        assert_eq!(f.get(320, 240), [0.0, 0.0, 1.0]);
        // green axis runs down the image
        assert_eq!(f.get(320, 289), [0.0, 1.0, 0.0]);
        assert_eq!(Matrix3::<f64>::identity().column(0)[0], 1.0);
    }

    #[test]
    fn heatmap_is_idempotent_and_translation_equivariant() {
        let cfg = RenderConfig::default();
        let mut a = cfg.canvas();
        gaussian_heatmap(&mut a, Vector2::new(100.3, 200.7), &cfg);
        let once = a.clone();
        gaussian_heatmap(&mut a, Vector2::new(100.3, 200.7), &cfg);
        assert_eq!(a, once);

        let mut b = cfg.canvas();
        gaussian_heatmap(&mut b, Vector2::new(105.3, 197.7), &cfg);
        for y in 150..250usize {
            for x in 50..150usize {
                assert_eq!(once.get(x, y), b.get(x + 5, y - 3));
            }
        }
    }
}
