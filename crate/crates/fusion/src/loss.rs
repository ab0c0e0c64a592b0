//! Rectified-flow noising, the total objective and per-sample gradients.

use crate::event::{encode_latent, frame_difference, patchify, LatentGrid, TokenGrid, Video};
use crate::model::{backward, dual_stream_forward_cached, DualStreamOutput, FusionParams, ModelConfig, OutputGrads};
use crate::{FusionError, Result};
use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct NoisedPair {
    pub z_t: LatentGrid,
    /// Flow target `noise − z0`.
    pub target: LatentGrid,
    pub t: f64,
    pub noise: LatentGrid,
}

/// `z_t = (1 − t)·z0 + t·noise`, `Y = noise − z0`.
pub fn noise_sample(z0: &LatentGrid, t: f64, noise: &LatentGrid) -> Result<NoisedPair> {
    if !z0.same_shape(noise) {
        return Err(FusionError::Shape(format!("latent {:?} vs noise {:?}", z0.shape(), noise.shape())));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(FusionError::Argument(format!("t = {t} outside [0, 1]")));
    }
    let z_t = &z0.values * (1.0 - t) + &noise.values * t;
    Ok(NoisedPair {
        z_t: LatentGrid::new(z_t, z0.block)?,
        target: LatentGrid::new(&noise.values - &z0.values, z0.block)?,
        t,
        noise: noise.clone(),
    })
}

/// Loss terms; each squared norm is a mean over its unmasked elements, and
/// the element counts are kept so the sum reduction can be recovered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Video flow term before `ω(t)`.
    pub video: f64,
    /// KVAF flow term before `ω(t)`.
    pub kvaf: f64,
    /// `(1/|S|) Σ_ℓ` event term before `λ_evt` (0 when `S` is empty).
    pub event: f64,
    pub event_per_layer: Vec<f64>,
    pub omega: f64,
    pub lambda_evt: f64,
    pub video_count: usize,
    pub kvaf_count: usize,
    pub event_count: usize,
}

fn sq_mean(a: &Array2<f64>, b: &Array2<f64>, keep: &[bool]) -> (f64, usize) {
    let mut s = 0.0;
    let mut n = 0;
    for ((ra, rb), &k) in a.rows().into_iter().zip(b.rows()).zip(keep) {
        if k {
            s += ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            n += ra.len();
        }
    }
    (if n == 0 { 0.0 } else { s / n as f64 }, n)
}

fn sq_mean_grad(a: &Array2<f64>, b: &Array2<f64>, keep: &[bool], n: usize, weight: f64) -> Array2<f64> {
    let mut g = Array2::zeros(a.raw_dim());
    if n == 0 || weight == 0.0 {
        return g;
    }
    let c = 2.0 * weight / n as f64;
    for (((mut rg, ra), rb), &k) in g.rows_mut().into_iter().zip(a.rows()).zip(b.rows()).zip(keep) {
        if k {
            Zip::from(&mut rg).and(&ra).and(&rb).for_each(|g, &x, &y| *g = c * (x - y));
        }
    }
    g
}

fn check_same(a: &TokenGrid, b: &TokenGrid, what: &str) -> Result<()> {
    if a.tokens.dim() != b.tokens.dim() || a.grid_shape != b.grid_shape {
        return Err(FusionError::Shape(format!(
            "{what}: prediction {:?} vs target {:?}",
            a.tokens.dim(),
            b.tokens.dim()
        )));
    }
    Ok(())
}

/// Token targets for one sample.
struct TokenTargets {
    yv: TokenGrid,
    yk: TokenGrid,
    event: TokenGrid,
}

fn loss_terms(
    pred: &DualStreamOutput,
    tgt: &TokenTargets,
    t: f64,
    cfg: &ModelConfig,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<OutputGrads>)> {
    check_same(&pred.yv, &tgt.yv, "video")?;
    check_same(&pred.yk, &tgt.yk, "KVAF")?;
    for e in &pred.events {
        check_same(e, &tgt.event, "event")?;
    }
    let n = pred.yv.len();
    // Tokens of the first (conditioning) frame do not enter the video term.
    let video_keep: Vec<bool> = (0..n).map(|i| pred.yv.token_time(i) != 0).collect();
    let all = vec![true; n];
    let omega = cfg.omega.weight(t);
    let (video, video_count) = sq_mean(&pred.yv.tokens, &tgt.yv.tokens, &video_keep);
    let (kvaf, kvaf_count) = sq_mean(&pred.yk.tokens, &tgt.yk.tokens, &all);
    // Unpatchify is a bijection, so the event residual is compared in token
    // layout; the mean is the same as in latent layout.
    let per_layer: Vec<(f64, usize)> = pred.events.iter().map(|e| sq_mean(&e.tokens, &tgt.event.tokens, &all)).collect();
    let s = per_layer.len();
    let event = if s == 0 {
        0.0
    } else {
        per_layer.iter().map(|p| p.0).sum::<f64>() / s as f64
    };
    let event_count = per_layer.first().map_or(0, |p| p.1);
    let breakdown = LossBreakdown {
        total: omega * (video + kvaf) + cfg.lambda_evt * event,
        video,
        kvaf,
        event,
        event_per_layer: per_layer.iter().map(|p| p.0).collect(),
        omega,
        lambda_evt: cfg.lambda_evt,
        video_count,
        kvaf_count,
        event_count,
    };
    let grads = want_grads.then(|| OutputGrads {
        yv: sq_mean_grad(&pred.yv.tokens, &tgt.yv.tokens, &video_keep, video_count, omega),
        yk: sq_mean_grad(&pred.yk.tokens, &tgt.yk.tokens, &all, kvaf_count, omega),
        events: pred
            .events
            .iter()
            .map(|e| sq_mean_grad(&e.tokens, &tgt.event.tokens, &all, event_count, cfg.lambda_evt / s as f64))
            .collect(),
    });
    Ok((breakdown, grads))
}

/// `ω(t)(‖Ŷ_v − Y_v‖² + ‖Ŷ_k − Y_k‖²) + λ_evt (1/|S|) Σ_ℓ ‖unpatchify(Ê_ℓ) − E‖²`
/// with mean reductions and first-frame video tokens masked out.
pub fn total_loss(
    pred: &DualStreamOutput,
    yv: &LatentGrid,
    yk: &LatentGrid,
    event: &LatentGrid,
    t: f64,
    cfg: &ModelConfig,
) -> Result<LossBreakdown> {
    let tgt = TokenTargets {
        yv: patchify(yv, pred.yv.patch)?,
        yk: patchify(yk, pred.yk.patch)?,
        event: patchify(event, pred.yv.patch)?,
    };
    Ok(loss_terms(pred, &tgt, t, cfg, false)?.0)
}

/// Everything one training step needs for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub zv_t: LatentGrid,
    pub zk_t: LatentGrid,
    pub yv: LatentGrid,
    pub yk: LatentGrid,
    /// EDLS target `E = encode(frame_difference(X))`.
    pub event: LatentGrid,
    pub t: f64,
}

impl Sample {
    /// Encodes the video and KVAF, noises both at `t` and builds the event
    /// target from the video.
    pub fn build(video: &Video, kvaf: &Video, t: f64, noise_v: &LatentGrid, noise_k: &LatentGrid, block: [usize; 3]) -> Result<Self> {
        if video.dim() != kvaf.dim() {
            return Err(FusionError::Shape(format!("video {:?} vs KVAF {:?}", video.dim(), kvaf.dim())));
        }
        let zv0 = encode_latent(video.view(), block)?;
        let zk0 = encode_latent(kvaf.view(), block)?;
        let nv = noise_sample(&zv0, t, noise_v)?;
        let nk = noise_sample(&zk0, t, noise_k)?;
        let event = encode_latent(frame_difference(video.view())?.view(), block)?;
        Ok(Self {
            zv_t: nv.z_t,
            zk_t: nk.z_t,
            yv: nv.target,
            yk: nk.target,
            event,
            t,
        })
    }

    fn token_targets(&self, patch: [usize; 3]) -> Result<TokenTargets> {
        Ok(TokenTargets {
            yv: patchify(&self.yv, patch)?,
            yk: patchify(&self.yk, patch)?,
            event: patchify(&self.event, patch)?,
        })
    }
}

pub fn sample_loss(params: &FusionParams, cfg: &ModelConfig, sample: &Sample) -> Result<(LossBreakdown, DualStreamOutput)> {
    let (pred, _) = dual_stream_forward_cached(&sample.zv_t, &sample.zk_t, sample.t, params, cfg)?;
    let (loss, _) = loss_terms(&pred, &sample.token_targets(cfg.patch)?, sample.t, cfg, false)?;
    Ok((loss, pred))
}

/// Forward, loss and reverse pass for one sample.
pub fn loss_and_grad(params: &FusionParams, cfg: &ModelConfig, sample: &Sample) -> Result<(LossBreakdown, FusionParams, DualStreamOutput)> {
    let (pred, cache) = dual_stream_forward_cached(&sample.zv_t, &sample.zk_t, sample.t, params, cfg)?;
    let (loss, grads) = loss_terms(&pred, &sample.token_targets(cfg.patch)?, sample.t, cfg, true)?;
    let g = backward(params, cfg, &cache, &grads.expect("requested"));
    Ok((loss, g, pred))
}
