//! Frame-difference event targets, the surrogate latent encoder and the
//! patchify/unpatchify token mapping.
//!
//! The surrogate encoder averages each `bt × bh × bw` block per channel. It
//! is linear, deterministic and maps a constant video to the same constant,
//! which is all the event supervision needs; it makes no attempt to be a
//! learned compressor.

use crate::{FusionError, Result};
use ndarray::{s, Array2, Array4, ArrayView4, Axis};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Video frames laid out as `T × H × W × C`.
pub type Video = Array4<f64>;

/// `ΔI_1 = 0`, `ΔI_τ = |I_τ − I_{τ−1}|`.
pub fn frame_difference(frames: ArrayView4<f64>) -> Result<Video> {
    let t = frames.len_of(Axis(0));
    if t == 0 {
        return Err(FusionError::Argument("frame_difference needs at least one frame".into()));
    }
    let mut out = Array4::zeros(frames.raw_dim());
    for tau in 1..t {
        let d = (&frames.index_axis(Axis(0), tau) - &frames.index_axis(Axis(0), tau - 1)).mapv(f64::abs);
        out.index_axis_mut(Axis(0), tau).assign(&d);
    }
    Ok(out)
}

/// A latent video `T' × H' × W' × C` plus the block factors that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    pub values: Array4<f64>,
    /// Temporal, vertical and horizontal downsample factors.
    pub block: [usize; 3],
}

impl LatentGrid {
    pub fn new(values: Array4<f64>, block: [usize; 3]) -> Result<Self> {
        if block.contains(&0) {
            return Err(FusionError::Shape(format!("block factors must be positive, got {block:?}")));
        }
        Ok(Self { values, block })
    }

    pub fn shape(&self) -> [usize; 4] {
        let d = self.values.dim();
        [d.0, d.1, d.2, d.3]
    }

    pub fn same_shape(&self, other: &LatentGrid) -> bool {
        self.values.dim() == other.values.dim()
    }
}

fn check_block(dims: [usize; 3], block: [usize; 3], what: &str) -> Result<()> {
    for (d, b) in dims.iter().zip(&block) {
        if *b == 0 || d % b != 0 || *d == 0 {
            return Err(FusionError::Shape(format!("{what} factors {block:?} do not divide dims {dims:?}")));
        }
    }
    Ok(())
}

/// Per-channel block means over `block = (bt, bh, bw)`.
pub fn encode_latent(frames: ArrayView4<f64>, block: [usize; 3]) -> Result<LatentGrid> {
    let (t, h, w, c) = frames.dim();
    check_block([t, h, w], block, "block")?;
    let [bt, bh, bw] = block;
    let scale = 1.0 / (bt * bh * bw) as f64;
    let mut out = Array4::zeros((t / bt, h / bh, w / bw, c));
    for ((lt, lh, lw, ch), v) in out.indexed_iter_mut() {
        let cube = frames.slice(s![lt * bt..(lt + 1) * bt, lh * bh..(lh + 1) * bh, lw * bw..(lw + 1) * bw, ch]);
        *v = cube.sum() * scale;
    }
    Ok(LatentGrid { values: out, block })
}

/// Nearest (block-constant) upsampling back to pixel resolution.
pub fn decode_latent(latent: &LatentGrid) -> Video {
    let (t, h, w, c) = latent.values.dim();
    let [bt, bh, bw] = latent.block;
    Array4::from_shape_fn((t * bt, h * bh, w * bw, c), |(i, j, k, ch)| {
        latent.values[[i / bt, j / bh, k / bw, ch]]
    })
}

/// `N × (pt·ph·pw·C)` tokens in row-major `(t, h, w)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub tokens: Array2<f64>,
    /// Token layout `(T', H'/ph, W'/pw)` with `T'` counted in patches.
    pub grid_shape: [usize; 3],
    pub patch: [usize; 3],
    pub channels: usize,
    /// Block factors of the latent the tokens came from.
    pub block: [usize; 3],
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn token_dim(&self) -> usize {
        self.tokens.ncols()
    }

    /// Same layout, different token values.
    pub fn with_tokens(&self, tokens: Array2<f64>) -> Result<Self> {
        if tokens.dim() != self.tokens.dim() {
            return Err(FusionError::Shape(format!(
                "token array {:?} does not match grid {:?}",
                tokens.dim(),
                self.tokens.dim()
            )));
        }
        Ok(Self { tokens, ..self.clone() })
    }

    /// Temporal grid index of token `n`.
    pub fn token_time(&self, n: usize) -> usize {
        n / (self.grid_shape[1] * self.grid_shape[2])
    }
}

/// Element `(dt, dh, dw, c)` of each token is laid out row-major.
pub fn patchify(latent: &LatentGrid, patch: [usize; 3]) -> Result<TokenGrid> {
    let (t, h, w, c) = latent.values.dim();
    check_block([t, h, w], patch, "patch")?;
    let [pt, ph, pw] = patch;
    let grid = [t / pt, h / ph, w / pw];
    let n = grid[0] * grid[1] * grid[2];
    let dim = pt * ph * pw * c;
    let mut tokens = Array2::zeros((n, dim));
    for ((i, j, k, ch), &v) in latent.values.indexed_iter() {
        let tok = ((i / pt) * grid[1] + j / ph) * grid[2] + k / pw;
        let off = (((i % pt) * ph + j % ph) * pw + k % pw) * c + ch;
        tokens[[tok, off]] = v;
    }
    Ok(TokenGrid {
        tokens,
        grid_shape: grid,
        patch,
        channels: c,
        block: latent.block,
    })
}

pub fn unpatchify(tokens: &TokenGrid) -> Result<LatentGrid> {
    let [pt, ph, pw] = tokens.patch;
    let [gt, gh, gw] = tokens.grid_shape;
    let c = tokens.channels;
    if tokens.tokens.dim() != (gt * gh * gw, pt * ph * pw * c) {
        return Err(FusionError::Shape(format!(
            "token array {:?} inconsistent with grid {:?}, patch {:?}, {c} channels",
            tokens.tokens.dim(),
            tokens.grid_shape,
            tokens.patch
        )));
    }
    let values = Array4::from_shape_fn((gt * pt, gh * ph, gw * pw, c), |(i, j, k, ch)| {
        let tok = ((i / pt) * gh + j / ph) * gw + k / pw;
        let off = (((i % pt) * ph + j % ph) * pw + k % pw) * c + ch;
        tokens.tokens[[tok, off]]
    });
    LatentGrid::new(values, tokens.block)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatentHeader {
    dtype: String,
    shape: [usize; 4],
    block: [usize; 3],
}

const LATENT_DTYPE: &str = "f64-le";

/// One JSON header line (`dtype`, `shape`, `block`), then the values as
/// little-endian `f64` in row-major `T' × H' × W' × C` order.
pub fn write_latent<W: Write>(latent: &LatentGrid, mut w: W) -> Result<()> {
    let header = LatentHeader {
        dtype: LATENT_DTYPE.into(),
        shape: latent.shape(),
        block: latent.block,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(latent.values.len() * 8);
    for v in latent.values.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_latent<R: Read>(mut r: R) -> Result<LatentGrid> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FusionError::Shape("latent file has no header line".into()))?;
    let header: LatentHeader = serde_json::from_slice(&bytes[..nl])?;
    if header.dtype != LATENT_DTYPE {
        return Err(FusionError::Shape(format!("unsupported dtype {}", header.dtype)));
    }
    let body = &bytes[nl + 1..];
    let n: usize = header.shape.iter().product();
    if body.len() != n * 8 {
        return Err(FusionError::Shape(format!("expected {} data bytes, found {}", n * 8, body.len())));
    }
    let data: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let [a, b, c, d] = header.shape;
    let values = Array4::from_shape_vec((a, b, c, d), data).map_err(|e| FusionError::Shape(e.to_string()))?;
    LatentGrid::new(values, header.block)
}
