//! Event-aware dual-stream fusion kernel at desk scale.
//!
//! Two token streams (video and KVAF latents) run through parallel
//! transformer blocks; at a sparse set of layers an event MLP predicts a
//! per-token gate and an event latent, and the gate scales bidirectional
//! cross-attention between the streams. The event latent is supervised with
//! encoded frame differences.
//!
//! Everything is plain `f64` ndarray code with hand-written reverse-mode
//! gradients, checked against finite differences in the test suite.

pub mod event;
pub mod loss;
pub mod model;
pub mod nn;
pub mod par;
pub mod train;

pub use event::{encode_latent, frame_difference, patchify, unpatchify, LatentGrid, TokenGrid};
pub use loss::{noise_sample, total_loss, LossBreakdown, NoisedPair};
pub use model::{backward, dual_stream_forward, event_fusion_layer, FusionParams, ModelConfig, Omega};
pub use train::{train_toy, Stage, TrainConfig, TrainingReport};

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged {
        step: usize,
        loss: f64,
        report: Box<TrainingReport>,
    },
    #[error("latent file: {0}")]
    Io(#[from] std::io::Error),
    #[error("latent header: {0}")]
    Header(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FusionError>;
