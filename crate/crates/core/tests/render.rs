use kvaf_core::camera::{project_point, CameraModel, DepthRange};
use kvaf_core::episode::{ArmState, Episode, EpisodeMeta, RobotState};
use kvaf_core::fixtures;
use kvaf_core::kinematics::{parse_urdf, Arm, KeypointSet};
use kvaf_core::par::Exec;
use kvaf_core::render::*;
use kvaf_core::synth::synth_trajectory;
use kvaf_core::transform::rpy_to_matrix;
use nalgebra::{Matrix4, Vector2, Vector3};
use proptest::prelude::*;

fn heat_at(f: &KvafFrame, x: usize, y: usize) -> f64 {
    f.get(x, y)[0]
}

#[test]
fn heatmap_formula() {
    let cfg = RenderConfig::default();
    let mut f = cfg.canvas();
    gaussian_heatmap(&mut f, Vector2::new(200.0, 100.0), &cfg);
    assert_eq!(heat_at(&f, 200, 100), 1.0);
    assert!((heat_at(&f, 206, 100) - (-0.5f64).exp()).abs() < 1e-12);
    assert!((heat_at(&f, 200, 94) - (-0.5f64).exp()).abs() < 1e-12);
    assert_eq!(heat_at(&f, 219, 100), 0.0);
    assert_eq!(f.get(200, 100)[1], 0.0);
}

#[test]
fn heatmap_clips_at_image_border() {
    let cfg = RenderConfig::default();
    let mut f = cfg.canvas();
    gaussian_heatmap(&mut f, Vector2::new(-3.0, 2.0), &cfg);
    assert!((heat_at(&f, 0, 2) - (-9.0f64 / 72.0).exp()).abs() < 1e-12);
    let mut g = cfg.canvas();
    gaussian_heatmap(&mut g, Vector2::new(-100.0, -100.0), &cfg);
    assert!(g.is_black());
}

fn bimanual_episode(frames: usize, seed: u64) -> (kvaf_core::KinematicChain, Episode) {
    let chain = parse_urdf(fixtures::BIMANUAL_URDF).unwrap();
    let ep = synth_trajectory(&chain, frames, seed).unwrap();
    (chain, ep)
}

#[test]
fn rendering_is_deterministic_and_thread_independent() {
    let (chain, ep) = bimanual_episode(6, 5);
    let cfg = RenderConfig::default();
    let a = render_episode_with(&ep, &chain, &cfg, 0.05, Exec::Sequential).unwrap();
    let b = render_episode_with(&ep, &chain, &cfg, 0.05, Exec::Parallel).unwrap();
    assert_eq!(a.sequence, b.sequence);
    assert_eq!(a.logs, b.logs);
    assert_eq!(a.sequence.len(), 6);
}

#[test]
fn static_episode_frames_are_identical() {
    let (chain, ep) = bimanual_episode(2, 1);
    let mut stat = ep.clone();
    stat.states = (0..4).map(|t| RobotState { t, ..ep.states[0].clone() }).collect();
    let r = render_episode(&stat, &chain, &RenderConfig::default()).unwrap();
    assert!(r.sequence.frames.windows(2).all(|w| w[0] == w[1]));
    assert!(!r.sequence.frames[0].is_black());
}

#[test]
fn single_frame_episode() {
    let (chain, mut ep) = bimanual_episode(2, 1);
    ep.states.truncate(1);
    assert_eq!(render_episode(&ep, &chain, &RenderConfig::default()).unwrap().sequence.len(), 1);
    ep.states.clear();
    assert!(matches!(
        render_episode(&ep, &chain, &RenderConfig::default()),
        Err(RenderError::EmptyEpisode)
    ));
}

#[test]
fn layer_colors_follow_conventions() {
    let (chain, ep) = bimanual_episode(1 + 1, 2);
    let r = render_episode(&ep, &chain, &RenderConfig::default()).unwrap();
    let f = &r.sequence.frames[0];
    let mut seen = [false; 4];
    for (x, y) in f.non_black_pixels() {
        match f.get(x, y) {
            [1.0, 0.0, 0.0] => seen[0] = true,
            [0.0, 1.0, 0.0] => seen[1] = true,
            [0.0, 0.0, 1.0] => seen[2] = true,
            [1.0, 1.0, 1.0] => seen[3] = true,
            _ => {}
        }
    }
    assert_eq!(seen, [true; 4]);
}

fn axis_camera() -> CameraModel {
    CameraModel::new(CameraModel::intrinsics(500.0, 500.0, 320.0, 240.0), Matrix4::identity(), 640, 480).unwrap()
}

fn lone_ee(rpy: [f64; 3], pos: Vector3<f64>) -> (RobotState, KeypointSet) {
    let rot = rpy_to_matrix(rpy);
    let arm = ArmState {
        q: vec![],
        g: 0.0,
        position: pos,
        quat: kvaf_core::transform::matrix_to_quat(&rot),
    };
    let state = RobotState {
        t: 0,
        left: arm.clone(),
        right: arm,
        camera: axis_camera(),
    };
    let mut kp = KeypointSet::empty(Arm::Left);
    kp.ee_point = pos;
    (state, kp)
}

fn seg_dist(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let d = b - a;
    let t = if d.norm_squared() == 0.0 {
        0.0
    } else {
        ((p - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0)
    };
    (p - (a + d * t)).norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn axes_are_pure_primaries_where_unoccluded(rpy in prop::array::uniform3(-3.0f64..3.0),
                                                 x in -0.2f64..0.2, y in -0.2f64..0.2, z in 0.6f64..1.5) {
        let cfg = RenderConfig::default();
        let (state, kp) = lone_ee(rpy, Vector3::new(x, y, z));
        let range = DepthRange::new(0.5, 2.0).unwrap();
        let f = render_frame(&state, &[kp], &range, &cfg);
        let cam = axis_camera();
        let c = project_point(&state.left.position, &cam).pixel;
        let rot = rpy_to_matrix(rpy);
        let tips: Vec<Vector2<f64>> = (0..3)
            .map(|m| project_point(&(state.left.position + rot.column(m) * cfg.axis_length), &cam).pixel)
            .collect();
        for m in 0..3 {
            let mid = (c + tips[m]) / 2.0;
            let (px, py) = (mid.x.round(), mid.y.round());
            let p = Vector2::new(px, py);
            let covered_later = (m + 1..3).any(|l| seg_dist(p, c, tips[l]) < 3.0);
            if covered_later || seg_dist(p, c, tips[m]) > 0.75 || (tips[m] - c).norm() < 6.0 {
                continue;
            }
            let rgb = f.get(px as usize, py as usize);
            let saturated: Vec<usize> = (0..3).filter(|&i| rgb[i] == 1.0).collect();
            prop_assert_eq!(saturated, vec![m]);
            prop_assert!((0..3).all(|i| i == m || rgb[i] == 0.0));
        }
    }

    #[test]
    fn all_values_stay_in_unit_range(seed in 0u64..500, sigma in 1.0f64..20.0, thickness in 1u32..6) {
        let (chain, ep) = bimanual_episode(2, seed);
        let cfg = RenderConfig { sigma, radius: 3.0 * sigma, line_thickness: thickness, ..RenderConfig::default() };
        let r = render_episode_with(&ep, &chain, &cfg, 0.05, Exec::Sequential).unwrap();
        for f in &r.sequence.frames {
            prop_assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn heatmap_support_shifts_with_center(cx in 20.0f64..600.0, cy in 20.0f64..440.0, dx in -15i64..15, dy in -15i64..15) {
        let cfg = RenderConfig::default();
        let mut a = cfg.canvas();
        gaussian_heatmap(&mut a, Vector2::new(cx, cy), &cfg);
        let mut b = cfg.canvas();
        gaussian_heatmap(&mut b, Vector2::new(cx + dx as f64, cy + dy as f64), &cfg);
        let sa: Vec<(i64, i64)> = a.non_black_pixels().map(|(x, y)| (x as i64 + dx, y as i64 + dy))
            .filter(|&(x, y)| x >= 0 && y >= 0 && x < 640 && y < 480).collect();
        let sb: Vec<(i64, i64)> = b.non_black_pixels().map(|(x, y)| (x as i64, y as i64))
            .filter(|&(x, y)| x - dx >= 0 && y - dy >= 0 && x - dx < 640 && y - dy < 480).collect();
        prop_assert_eq!(sa, sb);
    }
}

#[test]
fn episode_meta_defaults() {
    let m = EpisodeMeta::default();
    assert_eq!(m.fps, 30.0);
}
