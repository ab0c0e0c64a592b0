//! TOML run configuration. Every section is optional and unknown keys are
//! rejected; command-line flags override the file.

use std::path::{Path, PathBuf};

use kvaf_core::recovery::{DetectConfig, RecoveryConfig};
use kvaf_core::render::RenderConfig;
use kvaf_fusion::train::{Stage, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::io::{sha256_hex, ImageFormat};
use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Episode directory for `render`, `recover` (cameras and ground truth)
    /// and `roundtrip`.
    pub episode: Option<PathBuf>,
    /// Robot description used when the episode does not name one.
    pub chain: Option<String>,
    /// Frame directory for `recover` and `event-target`.
    pub frames: Option<PathBuf>,
    /// Camera file for `recover` when no episode is given.
    pub camera: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundtripSection {
    /// Synthetic episodes with seeds `seed, seed + 1, …` when no episode path
    /// is given.
    pub episodes: usize,
    pub frames: usize,
    /// Pass frames through 8-bit RGB as if written to disk.
    pub quantize: bool,
    pub max_translation_error: f64,
    pub max_rotation_error: f64,
    pub max_gripper_error: f64,
    pub min_detection_rate: f64,
}

impl Default for RoundtripSection {
    fn default() -> Self {
        Self {
            episodes: 1,
            frames: 64,
            quantize: true,
            max_translation_error: 0.0155,
            max_rotation_error: 0.110,
            max_gripper_error: 0.039,
            min_detection_rate: 0.45,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub episodes: usize,
    pub frames: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { episodes: 1, frames: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventSection {
    /// Latent block `(frames, rows, columns)`; the video must divide evenly.
    pub block: [usize; 3],
    /// Scale applied to the difference frames before 8-bit export.
    pub preview_gain: f64,
}

impl Default for EventSection {
    fn default() -> Self {
        Self {
            block: [1, 8, 8],
            preview_gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub stage: Stage,
    pub image_format: ImageFormat,
    pub paths: Paths,
    pub render: RenderConfig,
    /// Defaults to thresholds matched to `render`.
    pub detect: Option<DetectConfig>,
    pub recovery: RecoveryConfig,
    pub roundtrip: RoundtripSection,
    pub synth: SynthSection,
    pub event: EventSection,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stage: Stage::Full,
            image_format: ImageFormat::Ppm,
            paths: Paths::default(),
            render: RenderConfig::default(),
            detect: None,
            recovery: RecoveryConfig::default(),
            roundtrip: RoundtripSection::default(),
            synth: SynthSection::default(),
            event: EventSection::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, UsageError> {
        toml::from_str(text).map_err(|e| UsageError(format!("invalid config: {e}")))
    }

    /// Reads `path`; relative input paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| UsageError(format!("{}: {}", path.display(), e.0)))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.episode, &mut cfg.paths.frames, &mut cfg.paths.camera]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(c) = &mut cfg.paths.chain {
            if !c.starts_with("builtin:") && Path::new(c.as_str()).is_relative() {
                *c = base.join(&*c).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    /// The seed drives synthesis, model initialization and the toy data.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.model.seed = seed;
        self.train.data_seed = seed;
    }

    pub fn detect_config(&self) -> DetectConfig {
        self.detect.clone().unwrap_or_else(|| DetectConfig::matched(&self.render))
    }

    /// SHA-256 of the resolved configuration, written into every manifest.
    pub fn hash(&self) -> String {
        sha256_hex(toml::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        self.render.validate().map_err(|e| UsageError(format!("render: {e}")))?;
        self.train.model.validate().map_err(|e| UsageError(format!("train.model: {e}")))?;
        if self.synth.frames < 2 || self.roundtrip.frames < 2 {
            return Err(UsageError("episodes need at least 2 frames".into()));
        }
        if self.event.block.contains(&0) {
            return Err(UsageError("event.block entries must be positive".into()));
        }
        Ok(())
    }
}
