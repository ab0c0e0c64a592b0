//! Render → detect → recover → evaluate, one frame at a time.

use thiserror::Error;

use crate::camera::DEFAULT_DEPTH_MARGIN;
use crate::episode::Episode;
use crate::kinematics::KinematicChain;
use crate::par::{self, Exec};
use crate::recovery::{
    evaluate_recovery, ground_truth_actions, observe_frame, recover_from_observations, DetectConfig, PoseObservation, Recovery,
    RecoveryConfig, RecoveryError, RecoveryReport,
};
use crate::render::{EpisodeRenderer, KvafFrame, RenderConfig, RenderError};

#[derive(Debug, Error)]
pub enum RoundtripError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
}

#[derive(Debug, Clone, Default)]
pub struct RoundtripConfig {
    pub render: RenderConfig,
    pub detect: DetectConfig,
    pub recovery: RecoveryConfig,
    /// Pass frames through 8-bit RGB, as when they are written to disk.
    pub quantize: bool,
}

impl RoundtripConfig {
    pub fn defaults() -> Self {
        Self {
            quantize: true,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoundtripResult {
    pub report: RecoveryReport,
    pub recovery: Recovery,
    pub observations: Vec<Vec<PoseObservation>>,
}

/// Frames are rendered and detected independently (in parallel under
/// `exec`); association and smoothing then run in frame order.
pub fn roundtrip_episode(
    chain: &KinematicChain,
    episode: &Episode,
    cfg: &RoundtripConfig,
    exec: Exec,
) -> Result<RoundtripResult, RoundtripError> {
    let renderer = EpisodeRenderer::new(chain, episode, &cfg.render, DEFAULT_DEPTH_MARGIN)?;
    let observed = par::map(exec, &episode.states, |state| -> Result<_, RenderError> {
        let (mut frame, _) = renderer.render(state)?;
        if cfg.quantize {
            frame = KvafFrame::from_rgb8(frame.width(), frame.height(), &frame.to_rgb8());
        }
        Ok(observe_frame(&frame, &state.camera, &cfg.detect, cfg.render.axis_length))
    });
    let observations = observed.into_iter().collect::<Result<Vec<_>, _>>()?;
    let recovery = recover_from_observations(&observations, &cfg.recovery)?;
    let truth = ground_truth_actions(episode)?;
    let report = evaluate_recovery(&recovery.actions, &truth, recovery.detection_rate)?;
    Ok(RoundtripResult {
        report,
        recovery,
        observations,
    })
}
