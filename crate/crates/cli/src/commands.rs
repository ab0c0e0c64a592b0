//! Subcommand implementations. Each writes its artifacts under `out` and a
//! `manifest.json` listing them with their SHA-256 digests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kvaf_core::camera::DEFAULT_DEPTH_MARGIN;
use kvaf_core::kinematics::KinematicChain;
use kvaf_core::par::{self, Exec};
use kvaf_core::recovery::{evaluate_recovery, ground_truth_actions, observe_frame, recover_from_observations, RecoveryReport};
use kvaf_core::render::render_episode_with;
use kvaf_core::roundtrip::{roundtrip_episode, RoundtripConfig};
use kvaf_core::synth::synth_trajectory;
use kvaf_core::{CameraModel, Episode};
use kvaf_fusion::event::{encode_latent, frame_difference, write_latent};
use kvaf_fusion::train::{moving_square_dataset, train_toy, TrainingReport};
use kvaf_fusion::{FusionError, LossBreakdown};
use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::io::{self, fmt_f64, frame_name};
use crate::{AcceptanceFailure, UsageError};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub artifacts: Vec<Artifact>,
}

/// Collects the files a command writes.
struct Outputs {
    root: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Registers `rel` and returns its full path.
    fn path(&mut self, rel: &str) -> PathBuf {
        self.files.push(rel.to_string());
        self.root.join(rel)
    }

    fn finish(mut self, command: &str, cfg: &RunConfig) -> Result<Manifest> {
        self.files.sort();
        self.files.dedup();
        let artifacts = self
            .files
            .iter()
            .map(|rel| {
                let bytes = fs::read(self.root.join(rel)).with_context(|| format!("reading back {rel}"))?;
                Ok(Artifact {
                    path: rel.clone(),
                    bytes: bytes.len() as u64,
                    sha256: io::sha256_hex(&bytes),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            artifacts,
        };
        io::write_json(&self.root.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    let p = path.as_deref().ok_or_else(|| UsageError(format!("{what} is required")))?;
    if !p.exists() {
        return Err(UsageError(format!("{what} `{}` does not exist", p.display())).into());
    }
    Ok(p)
}

/// `paths.chain`, else the chain named by the episode, else the built-in
/// bimanual fixture.
fn resolve_chain(cfg: &RunConfig, episode: Option<(&Episode, &Path)>) -> Result<KinematicChain> {
    if let Some(spec) = &cfg.paths.chain {
        return io::load_chain(spec, Path::new(""));
    }
    match episode {
        Some((ep, path)) if !ep.meta.chain.is_empty() => {
            let dir = if path.is_dir() {
                path
            } else {
                path.parent().unwrap_or(Path::new(""))
            };
            io::load_chain(&ep.meta.chain, dir)
        }
        _ => io::load_chain("builtin:bimanual", Path::new("")),
    }
}

#[derive(Serialize)]
struct RenderLog<'a> {
    frames: usize,
    width: u32,
    height: u32,
    depth_range: kvaf_core::DepthRange,
    logs: &'a [kvaf_core::render::FrameLog],
}

pub fn render(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let ep_path = require(&cfg.paths.episode, "paths.episode")?;
    let episode = io::load_episode(ep_path)?;
    let chain = resolve_chain(cfg, Some((&episode, ep_path)))?;
    let rendered = render_episode_with(&episode, &chain, &cfg.render, DEFAULT_DEPTH_MARGIN, Exec::Parallel)?;
    let mut outputs = Outputs::new(out)?;
    let paths: Vec<PathBuf> = (0..rendered.sequence.len())
        .map(|i| outputs.path(&format!("frames/{}", frame_name(i, cfg.image_format))))
        .collect();
    par::map(
        Exec::Parallel,
        &paths.iter().zip(&rendered.sequence.frames).collect::<Vec<_>>(),
        |(p, f)| io::write_frame(p, f),
    )
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    io::write_json(
        &outputs.path("render.json"),
        &RenderLog {
            frames: rendered.sequence.len(),
            width: cfg.render.width,
            height: cfg.render.height,
            depth_range: rendered.range,
            logs: &rendered.logs,
        },
    )?;
    outputs.finish("render", cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoverSummary {
    pub frames: usize,
    pub detections_per_frame: Vec<usize>,
    pub detection_rate: f64,
    /// Present when the episode's ground truth is available.
    pub evaluation: Option<RecoveryReport>,
}

pub fn recover(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let frames_dir = require(&cfg.paths.frames, "paths.frames")?;
    let (cameras, truth) = if cfg.paths.episode.is_some() {
        let ep = io::load_episode(require(&cfg.paths.episode, "paths.episode")?)?;
        let cams: Vec<CameraModel> = ep.states.iter().map(|s| s.camera).collect();
        (cams, Some(ground_truth_actions(&ep)?))
    } else if cfg.paths.camera.is_some() {
        (io::load_cameras(require(&cfg.paths.camera, "paths.camera")?)?, None)
    } else {
        return Err(UsageError("recover needs paths.episode or paths.camera".into()).into());
    };
    let files = io::list_frames(frames_dir)?;
    if cameras.len() != 1 && cameras.len() != files.len() {
        return Err(UsageError(format!("{} cameras for {} frames", cameras.len(), files.len())).into());
    }
    let detect = cfg.detect_config();
    let observations = par::map_range(Exec::Parallel, files.len(), |i| -> Result<_> {
        let frame = io::read_frame(&files[i])?;
        let cam = &cameras[if cameras.len() == 1 { 0 } else { i }];
        Ok(observe_frame(&frame, cam, &detect, cfg.recovery.axis_length))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let recovery = recover_from_observations(&observations, &cfg.recovery)?;
    let evaluation = match truth {
        Some(t) if t.len() == recovery.actions.len() => Some(evaluate_recovery(&recovery.actions, &t, recovery.detection_rate)?),
        Some(t) => {
            return Err(UsageError(format!("episode has {} actions but {} frames were given", t.len(), files.len())).into());
        }
        None => None,
    };
    let mut outputs = Outputs::new(out)?;
    io::write_actions(&outputs.path("actions.csv"), &recovery.actions)?;
    io::write_json(
        &outputs.path("recovery.json"),
        &RecoverSummary {
            frames: files.len(),
            detections_per_frame: observations.iter().map(Vec::len).collect(),
            detection_rate: recovery.detection_rate,
            evaluation,
        },
    )?;
    outputs.finish("recover", cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub source: String,
    pub frames: usize,
    pub report: RecoveryReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundtripBounds {
    pub max_translation_error: f64,
    pub max_rotation_error: f64,
    pub max_gripper_error: f64,
    pub min_detection_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundtripSummary {
    pub episodes: Vec<EpisodeResult>,
    /// Per-field mean over episodes.
    pub mean: RecoveryReport,
    pub bounds: RoundtripBounds,
    pub violations: Vec<String>,
    pub pass: bool,
}

/// Episodes for `roundtrip`: the configured episode, or synthetic ones.
pub fn roundtrip_episodes(cfg: &RunConfig) -> Result<(KinematicChain, Vec<Episode>)> {
    if cfg.paths.episode.is_some() {
        let path = require(&cfg.paths.episode, "paths.episode")?;
        let ep = io::load_episode(path)?;
        let chain = resolve_chain(cfg, Some((&ep, path)))?;
        return Ok((chain, vec![ep]));
    }
    let chain = resolve_chain(cfg, None)?;
    let episodes = (0..cfg.roundtrip.episodes as u64)
        .map(|i| synth_trajectory(&chain, cfg.roundtrip.frames, cfg.seed + i))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((chain, episodes))
}

pub fn roundtrip_summary(cfg: &RunConfig, chain: &KinematicChain, episodes: &[Episode]) -> Result<RoundtripSummary> {
    anyhow::ensure!(!episodes.is_empty(), UsageError("roundtrip needs at least one episode".into()));
    let rt = RoundtripConfig {
        render: cfg.render.clone(),
        detect: cfg.detect_config(),
        recovery: cfg.recovery.clone(),
        quantize: cfg.roundtrip.quantize,
    };
    let mut results = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let r = roundtrip_episode(chain, ep, &rt, Exec::Parallel)?;
        results.push(EpisodeResult {
            source: ep.meta.source.clone(),
            frames: ep.len(),
            report: r.report,
        });
    }
    let n = results.len() as f64;
    let mean_of = |f: fn(&RecoveryReport) -> f64| results.iter().map(|r| f(&r.report)).sum::<f64>() / n;
    let mean = RecoveryReport {
        translation_error: mean_of(|r| r.translation_error),
        rotation_error: mean_of(|r| r.rotation_error),
        gripper_error: mean_of(|r| r.gripper_error),
        detection_rate: mean_of(|r| r.detection_rate),
    };
    let b = &cfg.roundtrip;
    let mut violations = Vec::new();
    for (name, value, bound, upper) in [
        ("translation_error", mean.translation_error, b.max_translation_error, true),
        ("rotation_error", mean.rotation_error, b.max_rotation_error, true),
        ("gripper_error", mean.gripper_error, b.max_gripper_error, true),
        ("detection_rate", mean.detection_rate, b.min_detection_rate, false),
    ] {
        let ok = if upper { value <= bound } else { value >= bound };
        if !ok {
            let rel = if upper { ">" } else { "<" };
            violations.push(format!("{name} {value} {rel} {bound}"));
        }
    }
    Ok(RoundtripSummary {
        episodes: results,
        mean,
        bounds: RoundtripBounds {
            max_translation_error: b.max_translation_error,
            max_rotation_error: b.max_rotation_error,
            max_gripper_error: b.max_gripper_error,
            min_detection_rate: b.min_detection_rate,
        },
        pass: violations.is_empty(),
        violations,
    })
}

/// Writes the report and manifest, then fails with [`AcceptanceFailure`] if
/// any bound is violated.
pub fn roundtrip(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let (chain, episodes) = roundtrip_episodes(cfg)?;
    let summary = roundtrip_summary(cfg, &chain, &episodes)?;
    let mut outputs = Outputs::new(out)?;
    io::write_json(&outputs.path("report.json"), &summary)?;
    let manifest = outputs.finish("roundtrip", cfg)?;
    if !summary.pass {
        return Err(AcceptanceFailure(summary.violations).into());
    }
    Ok(manifest)
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let chain = resolve_chain(cfg, None)?;
    let spec = cfg.paths.chain.clone().unwrap_or_else(|| "builtin:bimanual".into());
    let mut outputs = Outputs::new(out)?;
    for i in 0..cfg.synth.episodes as u64 {
        let seed = cfg.seed + i;
        let mut ep = synth_trajectory(&chain, cfg.synth.frames, seed)?;
        ep.meta.chain = spec.clone();
        ep.meta.source = format!("synth:{seed}");
        let rel = format!("episode_{seed:03}");
        io::save_episode(&ep, &out.join(&rel))?;
        for f in [io::STATES_FILE, io::CAMERA_FILE, io::META_FILE] {
            outputs.path(&format!("{rel}/{f}"));
        }
    }
    outputs.finish("synth", cfg)
}

fn loss_csv(losses: &[LossBreakdown]) -> String {
    let layers = losses.first().map_or(0, |l| l.event_per_layer.len());
    let mut s = String::from("step,total,video,kvaf,event,omega");
    for l in 0..layers {
        s.push_str(&format!(",event_{l}"));
    }
    s.push('\n');
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&i.to_string());
        for v in [l.total, l.video, l.kvaf, l.event, l.omega].iter().chain(&l.event_per_layer) {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

fn write_training(outputs: &mut Outputs, report: &TrainingReport) -> Result<()> {
    io::write_bytes(&outputs.path("loss.csv"), loss_csv(&report.losses).as_bytes())?;
    io::write_json(&outputs.path("report.json"), report)?;
    Ok(())
}

pub fn fuse_train(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let t = &cfg.train;
    let data = moving_square_dataset(t.episodes, t.frames, t.size, t.square, t.data_seed)?;
    let mut outputs = Outputs::new(out)?;
    match train_toy(&data, t, cfg.stage, kvaf_fusion::par::Exec::Parallel) {
        Ok(report) => {
            write_training(&mut outputs, &report)?;
            let params = report.params.as_ref().expect("trained parameters");
            io::save_checkpoint(
                params,
                &t.model,
                &cfg.hash(),
                &outputs.path("checkpoint.bin"),
                &outputs.path("checkpoint.json"),
            )?;
            outputs.finish("fuse-train", cfg)
        }
        Err(FusionError::Diverged { step, loss, report }) => {
            write_training(&mut outputs, &report)?;
            outputs.finish("fuse-train", cfg)?;
            anyhow::bail!("training diverged at step {step} (loss {loss})")
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventSummary {
    pub frames: usize,
    pub shape: [usize; 4],
    pub latent_shape: [usize; 4],
    pub block: [usize; 3],
    /// Mean absolute difference per frame; the first is always 0.
    pub mean_abs: Vec<f64>,
}

/// Loads a frame directory as a `(T, H, W, 3)` video in `[0, 1]`.
pub fn load_video(dir: &Path) -> Result<Array4<f64>> {
    let files = io::list_frames(dir)?;
    if files.is_empty() {
        return Err(UsageError(format!("no PPM or PNG frames in {}", dir.display())).into());
    }
    let frames = par::map(Exec::Parallel, &files, |p| io::read_frame(p))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = (frames[0].width(), frames[0].height());
    if frames.iter().any(|f| (f.width(), f.height()) != (w, h)) {
        return Err(UsageError("frames differ in size".into()).into());
    }
    let mut video = Array4::zeros((frames.len(), h, w, 3));
    for (t, f) in frames.iter().enumerate() {
        for (dst, src) in video.index_axis_mut(ndarray::Axis(0), t).iter_mut().zip(f.data()) {
            *dst = *src;
        }
    }
    Ok(video)
}

pub fn event_target(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let dir = require(&cfg.paths.frames, "paths.frames")?;
    let video = load_video(dir)?;
    let diff = frame_difference(video.view())?;
    let block = cfg.event.block;
    let latent = encode_latent(diff.view(), block).map_err(|e| UsageError(format!("event.block {block:?}: {e}")))?;
    let (t, h, w, c) = diff.dim();
    let mut outputs = Outputs::new(out)?;
    let gain = cfg.event.preview_gain;
    let paths: Vec<PathBuf> = (0..t)
        .map(|i| outputs.path(&format!("difference/{}", frame_name(i, cfg.image_format))))
        .collect();
    par::map_range(Exec::Parallel, t, |i| {
        let data: Vec<f64> = diff
            .index_axis(ndarray::Axis(0), i)
            .iter()
            .map(|v| (v * gain).clamp(0.0, 1.0))
            .collect();
        io::write_frame(&paths[i], &kvaf_core::render::KvafFrame::from_data(w, h, data))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let latent_path = outputs.path("event.latent");
    let mut writer = io::create_writer(&latent_path)?;
    write_latent(&latent, &mut writer)?;
    io::flush(writer, &latent_path)?;
    let mean_abs = diff.outer_iter().map(|f| f.mean().unwrap_or(0.0)).collect();
    io::write_json(
        &outputs.path("event.json"),
        &EventSummary {
            frames: t,
            shape: [t, h, w, c],
            latent_shape: latent.shape(),
            block,
            mean_abs,
        },
    )?;
    outputs.finish("event-target", cfg)
}
