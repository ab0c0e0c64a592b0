//! Dual-stream transformer with event-gated bidirectional fusion.
//!
//! Per layer `ℓ`: the KVAF block updates `H_k`; if `ℓ ∈ S` the fusion
//! module reads the video tokens from before this layer's video block and
//! the freshly updated KVAF tokens, predicts a gate `G` and event latent
//! `Ê`, and mixes the two streams through gated cross-attention; then the
//! video block updates `H_v`.

use crate::event::{patchify, LatentGrid, TokenGrid};
use crate::nn::{gelu, gelu_backward, layer_norm, layer_norm_backward, sigmoid, Attention, AttnCache, Linear, LnCache};
use crate::{FusionError, Result};
use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Flow-matching loss weight `ω(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Omega {
    Constant { value: f64 },
}

impl Default for Omega {
    fn default() -> Self {
        Omega::Constant { value: 1.0 }
    }
}

impl Omega {
    pub fn weight(&self, _t: f64) -> f64 {
        match *self {
            Omega::Constant { value } => value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Layer count `L`.
    pub depth: usize,
    /// Fusion layers `S`, 1-based and strictly increasing.
    pub fusion_layers: Vec<usize>,
    pub dim: usize,
    pub heads: usize,
    /// Width of the shared event representation `M`.
    pub event_dim: usize,
    pub ffn_mult: usize,
    /// Sinusoidal timestep feature count (even).
    pub time_dim: usize,
    pub lambda_evt: f64,
    pub omega: Omega,
    pub seed: u64,
    /// Latent block factors `(bt, bh, bw)` used by the surrogate encoder.
    pub block: [usize; 3],
    pub patch: [usize; 3],
    /// Latent channels.
    pub channels: usize,
    /// Scale of the initial weights relative to `1/√fan_in`.
    pub init_gain: f64,
    /// Initial scale of the output heads (`Head_v`, `Head_k`, `Γ`, `Ψ`).
    pub head_gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            fusion_layers: vec![2, 4],
            dim: 64,
            heads: 4,
            event_dim: 64,
            ffn_mult: 4,
            time_dim: 16,
            lambda_evt: 10.0,
            omega: Omega::default(),
            seed: 0,
            block: [2, 8, 8],
            patch: [1, 2, 2],
            channels: 3,
            init_gain: 1.0,
            head_gain: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FusionError::Config(m));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if !self.fusion_layers.windows(2).all(|w| w[0] < w[1]) {
            return bad(format!("fusion layers {:?} must be strictly increasing", self.fusion_layers));
        }
        if self.fusion_layers.iter().any(|&l| l == 0 || l > self.depth) {
            return bad(format!("fusion layers {:?} outside 1..={}", self.fusion_layers, self.depth));
        }
        if self.heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim {} not divisible by {} heads", self.dim, self.heads));
        }
        if !(self.lambda_evt >= 0.0 && self.lambda_evt.is_finite()) {
            return bad(format!("lambda_evt must be finite and non-negative, got {}", self.lambda_evt));
        }
        if self.event_dim == 0 || self.ffn_mult == 0 || self.channels == 0 {
            return bad("event_dim, ffn_mult and channels must be positive".into());
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return bad(format!("time_dim must be positive and even, got {}", self.time_dim));
        }
        if self.block.contains(&0) || self.patch.contains(&0) {
            return bad("block and patch factors must be positive".into());
        }
        let Omega::Constant { value } = self.omega;
        if !value.is_finite() || value < 0.0 {
            return bad(format!("omega must be finite and non-negative, got {value}"));
        }
        Ok(())
    }

    /// Width of one patch token.
    pub fn token_dim(&self) -> usize {
        self.patch.iter().product::<usize>() * self.channels
    }

    pub fn fusion_index(&self, layer: usize) -> Option<usize> {
        self.fusion_layers.iter().position(|&l| l == layer)
    }
}

/// One transformer block: additive timestep embedding, pre-norm
/// self-attention, pre-norm GELU feedforward.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub time: Linear,
    pub attn: Attention,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    tfeat: Array2<f64>,
    ln1: LnCache,
    attn: AttnCache,
    n2: Array2<f64>,
    ln2: LnCache,
    z: Array2<f64>,
    g: Array2<f64>,
}

impl Block {
    fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let d = cfg.dim;
        Self {
            time: Linear::new(rng, cfg.time_dim, d, cfg.init_gain),
            attn: Attention::new(rng, d, cfg.init_gain),
            ff1: Linear::new(rng, d, d * cfg.ffn_mult, cfg.init_gain),
            ff2: Linear::new(rng, d * cfg.ffn_mult, d, cfg.init_gain),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            time: zeros_linear(&self.time),
            attn: zeros_attention(&self.attn),
            ff1: zeros_linear(&self.ff1),
            ff2: zeros_linear(&self.ff2),
        }
    }

    fn forward(&self, h: ArrayView2<f64>, tfeat: ArrayView2<f64>, heads: usize) -> (Array2<f64>, BlockCache) {
        let h0 = &h + &self.time.forward(tfeat);
        let (n1, ln1) = layer_norm(h0.view());
        let (a, attn) = self.attn.forward(n1.view(), n1.view(), heads);
        let h1 = h0 + a;
        let (n2, ln2) = layer_norm(h1.view());
        let z = self.ff1.forward(n2.view());
        let g = gelu(z.view());
        let out = h1 + self.ff2.forward(g.view());
        let cache = BlockCache {
            tfeat: tfeat.to_owned(),
            ln1,
            attn,
            n2,
            ln2,
            z,
            g,
        };
        (out, cache)
    }

    fn backward(&self, c: &BlockCache, dout: Array2<f64>, heads: usize, grad: &mut Block) -> Array2<f64> {
        let dg = self.ff2.backward(c.g.view(), dout.view(), &mut grad.ff2);
        let dz = gelu_backward(c.z.view(), dg.view());
        let dn2 = self.ff1.backward(c.n2.view(), dz.view(), &mut grad.ff1);
        let dh1 = dout + layer_norm_backward(dn2.view(), &c.ln2);
        let (dq, dkv) = self.attn.backward(&c.attn, dh1.view(), heads, &mut grad.attn);
        let dn1 = dq + dkv;
        let dh0 = layer_norm_backward(dn1.view(), &c.ln1) + &dh1;
        let dt = dh0.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.time.backward(c.tfeat.view(), dt.view(), &mut grad.time);
        dh0
    }

    fn visit<'a>(&'a self, p: &str, f: &mut dyn FnMut(String, &'a Array2<f64>)) {
        self.time.visit(&format!("{p}.time"), f);
        self.attn.visit(&format!("{p}.attn"), f);
        self.ff1.visit(&format!("{p}.ff1"), f);
        self.ff2.visit(&format!("{p}.ff2"), f);
    }

    fn visit_mut<'a>(&'a mut self, p: &str, f: &mut dyn FnMut(String, &'a mut Array2<f64>)) {
        self.time.visit_mut(&format!("{p}.time"), f);
        self.attn.visit_mut(&format!("{p}.attn"), f);
        self.ff1.visit_mut(&format!("{p}.ff1"), f);
        self.ff2.visit_mut(&format!("{p}.ff2"), f);
    }
}

fn zeros_linear(l: &Linear) -> Linear {
    Linear {
        w: Array2::zeros(l.w.raw_dim()),
        b: Array2::zeros(l.b.raw_dim()),
    }
}

fn zeros_attention(a: &Attention) -> Attention {
    Attention {
        wq: Array2::zeros(a.wq.raw_dim()),
        wk: Array2::zeros(a.wk.raw_dim()),
        wv: Array2::zeros(a.wv.raw_dim()),
        out: zeros_linear(&a.out),
    }
}

/// Event MLP `Φ` (two layers over the per-token concatenation `[H_v | H_k]`),
/// gate head `Γ`, event head `Ψ` and the two cross-attentions.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFusion {
    pub phi1: Linear,
    pub phi2: Linear,
    pub gamma: Linear,
    pub psi: Linear,
    /// Video queries, KVAF keys/values.
    pub ca_vk: Attention,
    /// KVAF queries, video keys/values.
    pub ca_kv: Attention,
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    x: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    m: Array2<f64>,
    gate: Array1<f64>,
    rv: Array2<f64>,
    rk: Array2<f64>,
    cvk: AttnCache,
    ckv: AttnCache,
}

impl FusionCache {
    /// Per-head attention weights of `CA_{v←k}` and `CA_{k←v}`.
    pub fn attention_weights(&self) -> (&[Array2<f64>], &[Array2<f64>]) {
        (&self.cvk.probs, &self.ckv.probs)
    }
}

/// Output of one fusion layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    /// `H̃_v = H_v + G ⊙ CA_{v←k}(H_v, H_k)`.
    pub hv: Array2<f64>,
    /// `H_k' = H_k + G ⊙ CA_{k←v}(H_k, H_v)`.
    pub hk: Array2<f64>,
    /// `Ê`, in patch-token space.
    pub event: Array2<f64>,
    /// Per-token gate in `(0, 1)`.
    pub gate: Array1<f64>,
}

fn scale_rows(x: &Array2<f64>, g: &Array1<f64>) -> Array2<f64> {
    x * &g.view().insert_axis(Axis(1))
}

impl EventFusion {
    fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let (d, e) = (cfg.dim, cfg.event_dim);
        Self {
            phi1: Linear::new(rng, 2 * d, e, cfg.init_gain),
            phi2: Linear::new(rng, e, e, cfg.init_gain),
            gamma: Linear::new(rng, e, 1, cfg.head_gain),
            psi: Linear::new(rng, e, cfg.token_dim(), cfg.head_gain),
            ca_vk: Attention::new(rng, d, cfg.init_gain),
            ca_kv: Attention::new(rng, d, cfg.init_gain),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            phi1: zeros_linear(&self.phi1),
            phi2: zeros_linear(&self.phi2),
            gamma: zeros_linear(&self.gamma),
            psi: zeros_linear(&self.psi),
            ca_vk: zeros_attention(&self.ca_vk),
            ca_kv: zeros_attention(&self.ca_kv),
        }
    }

    pub fn forward(&self, hv: ArrayView2<f64>, hk: ArrayView2<f64>, heads: usize) -> (FusionOutput, FusionCache) {
        let x = concatenate(Axis(1), &[hv, hk]).expect("equal token counts");
        let z1 = self.phi1.forward(x.view());
        let a1 = gelu(z1.view());
        let m = self.phi2.forward(a1.view());
        let gate = self.gamma.forward(m.view()).column(0).mapv(sigmoid);
        let event = self.psi.forward(m.view());
        let (rv, cvk) = self.ca_vk.forward(hv, hk, heads);
        let (rk, ckv) = self.ca_kv.forward(hk, hv, heads);
        let out = FusionOutput {
            hv: &hv + &scale_rows(&rv, &gate),
            hk: &hk + &scale_rows(&rk, &gate),
            event,
            gate: gate.clone(),
        };
        let cache = FusionCache {
            x,
            z1,
            a1,
            m,
            gate,
            rv,
            rk,
            cvk,
            ckv,
        };
        (out, cache)
    }

    /// Returns gradients for the video and KVAF inputs.
    fn backward(
        &self,
        c: &FusionCache,
        dhv_out: &Array2<f64>,
        dhk_out: &Array2<f64>,
        devent: ArrayView2<f64>,
        heads: usize,
        grad: &mut EventFusion,
    ) -> (Array2<f64>, Array2<f64>) {
        let d = dhv_out.ncols();
        let dgate: Array1<f64> = (dhv_out * &c.rv).sum_axis(Axis(1)) + (dhk_out * &c.rk).sum_axis(Axis(1));
        let drv = scale_rows(dhv_out, &c.gate);
        let drk = scale_rows(dhk_out, &c.gate);
        let mut dhv = dhv_out.clone();
        let mut dhk = dhk_out.clone();
        let (dq, dkv) = self.ca_vk.backward(&c.cvk, drv.view(), heads, &mut grad.ca_vk);
        dhv += &dq;
        dhk += &dkv;
        let (dq, dkv) = self.ca_kv.backward(&c.ckv, drk.view(), heads, &mut grad.ca_kv);
        dhk += &dq;
        dhv += &dkv;
        let mut dz = dgate;
        Zip::from(&mut dz).and(&c.gate).for_each(|g, &s| *g *= s * (1.0 - s));
        let mut dm = self.gamma.backward(c.m.view(), dz.insert_axis(Axis(1)).view(), &mut grad.gamma);
        dm += &self.psi.backward(c.m.view(), devent, &mut grad.psi);
        let da1 = self.phi2.backward(c.a1.view(), dm.view(), &mut grad.phi2);
        let dz1 = gelu_backward(c.z1.view(), da1.view());
        let dx = self.phi1.backward(c.x.view(), dz1.view(), &mut grad.phi1);
        dhv += &dx.slice(s![.., ..d]);
        dhk += &dx.slice(s![.., d..]);
        (dhv, dhk)
    }

    fn visit<'a>(&'a self, p: &str, f: &mut dyn FnMut(String, &'a Array2<f64>)) {
        self.phi1.visit(&format!("{p}.phi1"), f);
        self.phi2.visit(&format!("{p}.phi2"), f);
        self.gamma.visit(&format!("{p}.gamma"), f);
        self.psi.visit(&format!("{p}.psi"), f);
        self.ca_vk.visit(&format!("{p}.ca_vk"), f);
        self.ca_kv.visit(&format!("{p}.ca_kv"), f);
    }

    fn visit_mut<'a>(&'a mut self, p: &str, f: &mut dyn FnMut(String, &'a mut Array2<f64>)) {
        self.phi1.visit_mut(&format!("{p}.phi1"), f);
        self.phi2.visit_mut(&format!("{p}.phi2"), f);
        self.gamma.visit_mut(&format!("{p}.gamma"), f);
        self.psi.visit_mut(&format!("{p}.psi"), f);
        self.ca_vk.visit_mut(&format!("{p}.ca_vk"), f);
        self.ca_kv.visit_mut(&format!("{p}.ca_kv"), f);
    }
}

/// All trainable tensors. `fusion[i]` belongs to layer `fusion_layers[i]`.
/// Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub embed_v: Linear,
    pub embed_k: Linear,
    pub video_blocks: Vec<Block>,
    pub kvaf_blocks: Vec<Block>,
    pub fusion: Vec<EventFusion>,
    pub head_v: Linear,
    pub head_k: Linear,
}

/// Name prefix shared by every fusion-module tensor.
pub const FUSION_PREFIX: &str = "fusion.";

impl FusionParams {
    /// Seeded initialization from `cfg.seed`.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let p = cfg.token_dim();
        let embed_v = Linear::new(&mut rng, p, cfg.dim, cfg.init_gain);
        let embed_k = Linear::new(&mut rng, p, cfg.dim, cfg.init_gain);
        let video_blocks = (0..cfg.depth).map(|_| Block::new(&mut rng, cfg)).collect();
        let kvaf_blocks = (0..cfg.depth).map(|_| Block::new(&mut rng, cfg)).collect();
        let fusion = cfg.fusion_layers.iter().map(|_| EventFusion::new(&mut rng, cfg)).collect();
        let head_v = Linear::new(&mut rng, cfg.dim, p, cfg.head_gain);
        let head_k = Linear::new(&mut rng, cfg.dim, p, cfg.head_gain);
        Ok(Self {
            embed_v,
            embed_k,
            video_blocks,
            kvaf_blocks,
            fusion,
            head_v,
            head_k,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embed_v: zeros_linear(&self.embed_v),
            embed_k: zeros_linear(&self.embed_k),
            video_blocks: self.video_blocks.iter().map(Block::zeros_like).collect(),
            kvaf_blocks: self.kvaf_blocks.iter().map(Block::zeros_like).collect(),
            fusion: self.fusion.iter().map(EventFusion::zeros_like).collect(),
            head_v: zeros_linear(&self.head_v),
            head_k: zeros_linear(&self.head_k),
        }
    }

    /// Visits every tensor in a fixed order with a stable dotted name.
    /// Layer numbers in names are 1-based.
    pub fn visit<'a>(&'a self, cfg: &ModelConfig, f: &mut dyn FnMut(String, &'a Array2<f64>)) {
        self.embed_v.visit("embed_v", f);
        self.embed_k.visit("embed_k", f);
        for (l, b) in self.video_blocks.iter().enumerate() {
            b.visit(&format!("video.{}", l + 1), f);
        }
        for (l, b) in self.kvaf_blocks.iter().enumerate() {
            b.visit(&format!("kvaf.{}", l + 1), f);
        }
        for (fu, l) in self.fusion.iter().zip(&cfg.fusion_layers) {
            fu.visit(&format!("{FUSION_PREFIX}{l}"), f);
        }
        self.head_v.visit("head_v", f);
        self.head_k.visit("head_k", f);
    }

    pub fn visit_mut<'a>(&'a mut self, cfg: &ModelConfig, f: &mut dyn FnMut(String, &'a mut Array2<f64>)) {
        self.embed_v.visit_mut("embed_v", f);
        self.embed_k.visit_mut("embed_k", f);
        for (l, b) in self.video_blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("video.{}", l + 1), f);
        }
        for (l, b) in self.kvaf_blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("kvaf.{}", l + 1), f);
        }
        for (fu, l) in self.fusion.iter_mut().zip(&cfg.fusion_layers) {
            fu.visit_mut(&format!("{FUSION_PREFIX}{l}"), f);
        }
        self.head_v.visit_mut("head_v", f);
        self.head_k.visit_mut("head_k", f);
    }

    /// `(name, shape)` of every tensor in visit order.
    pub fn layout(&self, cfg: &ModelConfig) -> Vec<(String, [usize; 2])> {
        let mut out = Vec::new();
        self.visit(cfg, &mut |n, a| out.push((n, [a.nrows(), a.ncols()])));
        out
    }

    pub fn num_params(&self, cfg: &ModelConfig) -> usize {
        self.layout(cfg).iter().map(|(_, s)| s[0] * s[1]).sum()
    }

    /// All values concatenated in visit order, each tensor row-major.
    pub fn to_flat(&self, cfg: &ModelConfig) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(cfg, &mut |_, a| out.extend(a.iter().copied()));
        out
    }

    /// Overwrites all tensors from [`to_flat`](Self::to_flat) order.
    pub fn load_flat(&mut self, cfg: &ModelConfig, flat: &[f64]) -> Result<()> {
        let need = self.num_params(cfg);
        if flat.len() != need {
            return Err(FusionError::Shape(format!("expected {need} parameters, got {}", flat.len())));
        }
        let mut off = 0;
        self.visit_mut(cfg, &mut |_, a| {
            for v in a.iter_mut() {
                *v = flat[off];
                off += 1;
            }
        });
        Ok(())
    }

    pub fn is_finite(&self, cfg: &ModelConfig) -> bool {
        let mut ok = true;
        self.visit(cfg, &mut |_, a| ok &= a.iter().all(|v| v.is_finite()));
        ok
    }

    /// `self += scale · other`, optionally skipping tensors by name.
    pub fn add_scaled(&mut self, cfg: &ModelConfig, other: &FusionParams, scale: f64, skip: impl Fn(&str) -> bool) {
        let mut src = Vec::new();
        other.visit(cfg, &mut |_, a| src.push(a));
        let mut i = 0;
        self.visit_mut(cfg, &mut |name, a| {
            if !skip(&name) {
                a.scaled_add(scale, src[i]);
            }
            i += 1;
        });
    }
}

/// Fixed 3D sinusoidal encoding over the token grid `(t, h, w)`. Channel `j`
/// encodes axis `j mod 3`; successive channels of one axis alternate sin and
/// cos with geometrically decreasing frequency.
pub fn positional_encoding(grid: [usize; 3], dim: usize) -> Array2<f64> {
    let n = grid[0] * grid[1] * grid[2];
    Array2::from_shape_fn((n, dim), |(tok, j)| {
        let pos = [tok / (grid[1] * grid[2]), (tok / grid[2]) % grid[1], tok % grid[2]];
        let axis = j % 3;
        let slot = j / 3;
        let freq = 10000f64.powf(-((slot / 2) as f64 * 2.0) / dim as f64);
        let arg = pos[axis] as f64 * freq;
        if slot % 2 == 0 {
            arg.sin()
        } else {
            arg.cos()
        }
    })
}

/// `1 × F` sinusoidal features of `t ∈ [0, 1]` (scaled by 1000).
pub fn timestep_features(t: f64, dim: usize) -> Array2<f64> {
    let half = dim / 2;
    Array2::from_shape_fn((1, dim), |(_, j)| {
        let freq = 10000f64.powf(-((j % half) as f64) / half as f64);
        let arg = 1000.0 * t * freq;
        if j < half {
            arg.sin()
        } else {
            arg.cos()
        }
    })
}

/// Token-space predictions of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub yv: Array2<f64>,
    pub yk: Array2<f64>,
    /// `Ê_ℓ` per fusion layer.
    pub events: Vec<Array2<f64>>,
    /// `G_ℓ` per fusion layer.
    pub gates: Vec<Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    xv: Array2<f64>,
    xk: Array2<f64>,
    video: Vec<BlockCache>,
    kvaf: Vec<BlockCache>,
    pub fusion: Vec<FusionCache>,
    hv: Array2<f64>,
    hk: Array2<f64>,
}

/// Forward pass on raw patch tokens with an explicit positional encoding.
pub fn forward_tokens(
    params: &FusionParams,
    cfg: &ModelConfig,
    xv: ArrayView2<f64>,
    xk: ArrayView2<f64>,
    pe: ArrayView2<f64>,
    t: f64,
) -> Result<(ForwardOutput, ForwardCache)> {
    let p = cfg.token_dim();
    if xv.dim() != xk.dim() || xv.ncols() != p || pe.dim() != (xv.nrows(), cfg.dim) {
        return Err(FusionError::Shape(format!(
            "video tokens {:?}, KVAF tokens {:?}, positional {:?} (token dim {p}, model dim {})",
            xv.dim(),
            xk.dim(),
            pe.dim(),
            cfg.dim
        )));
    }
    if params.video_blocks.len() != cfg.depth || params.fusion.len() != cfg.fusion_layers.len() {
        return Err(FusionError::Shape("parameters do not match config".into()));
    }
    let tfeat = timestep_features(t, cfg.time_dim);
    let mut hv = params.embed_v.forward(xv) + pe;
    let mut hk = params.embed_k.forward(xk) + pe;
    let mut video = Vec::with_capacity(cfg.depth);
    let mut kvaf = Vec::with_capacity(cfg.depth);
    let mut fusion = Vec::with_capacity(cfg.fusion_layers.len());
    let mut events = Vec::new();
    let mut gates = Vec::new();
    for l in 0..cfg.depth {
        let (hk_bar, kc) = params.kvaf_blocks[l].forward(hk.view(), tfeat.view(), cfg.heads);
        kvaf.push(kc);
        let hv_tilde = match cfg.fusion_index(l + 1) {
            Some(i) => {
                let (out, fc) = params.fusion[i].forward(hv.view(), hk_bar.view(), cfg.heads);
                fusion.push(fc);
                events.push(out.event);
                gates.push(out.gate);
                hk = out.hk;
                out.hv
            }
            None => {
                hk = hk_bar;
                hv
            }
        };
        let (next, vc) = params.video_blocks[l].forward(hv_tilde.view(), tfeat.view(), cfg.heads);
        video.push(vc);
        hv = next;
    }
    let out = ForwardOutput {
        yv: params.head_v.forward(hv.view()),
        yk: params.head_k.forward(hk.view()),
        events,
        gates,
    };
    let cache = ForwardCache {
        xv: xv.to_owned(),
        xk: xk.to_owned(),
        video,
        kvaf,
        fusion,
        hv,
        hk,
    };
    Ok((out, cache))
}

/// Gradients of the loss with respect to each forward output.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub yv: Array2<f64>,
    pub yk: Array2<f64>,
    pub events: Vec<Array2<f64>>,
}

/// Reverse pass through a cached forward; returns parameter gradients.
pub fn backward(params: &FusionParams, cfg: &ModelConfig, cache: &ForwardCache, grads: &OutputGrads) -> FusionParams {
    let mut g = params.zeros_like();
    let mut dhv = params.head_v.backward(cache.hv.view(), grads.yv.view(), &mut g.head_v);
    let mut dhk = params.head_k.backward(cache.hk.view(), grads.yk.view(), &mut g.head_k);
    for l in (0..cfg.depth).rev() {
        let dhv_tilde = params.video_blocks[l].backward(&cache.video[l], dhv, cfg.heads, &mut g.video_blocks[l]);
        let dhk_bar = match cfg.fusion_index(l + 1) {
            Some(i) => {
                let (dv, dk) = params.fusion[i].backward(
                    &cache.fusion[i],
                    &dhv_tilde,
                    &dhk,
                    grads.events[i].view(),
                    cfg.heads,
                    &mut g.fusion[i],
                );
                dhv = dv;
                dk
            }
            None => {
                dhv = dhv_tilde;
                dhk
            }
        };
        dhk = params.kvaf_blocks[l].backward(&cache.kvaf[l], dhk_bar, cfg.heads, &mut g.kvaf_blocks[l]);
    }
    params.embed_v.backward(cache.xv.view(), dhv.view(), &mut g.embed_v);
    params.embed_k.backward(cache.xk.view(), dhk.view(), &mut g.embed_k);
    g
}

/// Predictions of [`dual_stream_forward`] in token-grid form.
#[derive(Debug, Clone, PartialEq)]
pub struct DualStreamOutput {
    pub yv: TokenGrid,
    pub yk: TokenGrid,
    pub events: Vec<TokenGrid>,
    pub gates: Vec<Array1<f64>>,
}

/// Patchifies both noised latents, runs the model and returns predictions
/// laid out like the input tokens.
pub fn dual_stream_forward(
    zv_t: &LatentGrid,
    zk_t: &LatentGrid,
    t: f64,
    params: &FusionParams,
    cfg: &ModelConfig,
) -> Result<DualStreamOutput> {
    Ok(dual_stream_forward_cached(zv_t, zk_t, t, params, cfg)?.0)
}

pub fn dual_stream_forward_cached(
    zv_t: &LatentGrid,
    zk_t: &LatentGrid,
    t: f64,
    params: &FusionParams,
    cfg: &ModelConfig,
) -> Result<(DualStreamOutput, ForwardCache)> {
    if !zv_t.same_shape(zk_t) {
        return Err(FusionError::Shape(format!(
            "latent shapes differ: {:?} vs {:?}",
            zv_t.shape(),
            zk_t.shape()
        )));
    }
    if zv_t.shape()[3] != cfg.channels {
        return Err(FusionError::Shape(format!(
            "latent has {} channels, config {}",
            zv_t.shape()[3],
            cfg.channels
        )));
    }
    let tv = patchify(zv_t, cfg.patch)?;
    let tk = patchify(zk_t, cfg.patch)?;
    let pe = positional_encoding(tv.grid_shape, cfg.dim);
    let (out, cache) = forward_tokens(params, cfg, tv.tokens.view(), tk.tokens.view(), pe.view(), t)?;
    let wrap = |a: Array2<f64>| tv.with_tokens(a);
    let res = DualStreamOutput {
        yv: wrap(out.yv)?,
        yk: wrap(out.yk)?,
        events: out.events.into_iter().map(wrap).collect::<Result<_>>()?,
        gates: out.gates,
    };
    Ok((res, cache))
}

/// One fusion layer applied to hidden token matrices `H_v`, `H_k` at the
/// 1-based layer `layer ∈ S`.
pub fn event_fusion_layer(
    hv: ArrayView2<f64>,
    hk: ArrayView2<f64>,
    params: &FusionParams,
    cfg: &ModelConfig,
    layer: usize,
) -> Result<(FusionOutput, FusionCache)> {
    if hv.dim() != hk.dim() || hv.ncols() != cfg.dim {
        return Err(FusionError::Shape(format!(
            "stream shapes {:?} and {:?} (dim {})",
            hv.dim(),
            hk.dim(),
            cfg.dim
        )));
    }
    let i = cfg
        .fusion_index(layer)
        .ok_or_else(|| FusionError::Argument(format!("layer {layer} is not a fusion layer")))?;
    Ok(params.fusion[i].forward(hv, hk, cfg.heads))
}
