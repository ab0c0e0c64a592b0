//! Dense layers with hand-written backward passes.
//!
//! Activations are `N × D` row-per-token matrices. Every `*_backward` takes
//! the upstream gradient, accumulates parameter gradients into a
//! same-shaped gradient struct, and returns input gradients.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const LN_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_K: f64 = 0.044_715;

pub fn init_matrix(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    if std == 0.0 {
        return Array2::zeros((rows, cols));
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

/// `y = x W + b` with `W: in × out`, `b: 1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, input: usize, output: usize, gain: f64) -> Self {
        Self {
            w: init_matrix(rng, input, output, gain / (input as f64).sqrt()),
            b: Array2::zeros((1, output)),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((input, output)),
            b: Array2::zeros((1, output)),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(&dy);
        grad.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Array2<f64>)) {
        f(format!("{prefix}.w"), &self.w);
        f(format!("{prefix}.b"), &self.b);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Array2<f64>)) {
        f(format!("{prefix}.w"), &mut self.w);
        f(format!("{prefix}.b"), &mut self.b);
    }
}

/// Row-wise layer norm without affine parameters.
#[derive(Debug, Clone)]
pub struct LnCache {
    y: Array2<f64>,
    inv_std: Array1<f64>,
}

pub fn layer_norm(x: ArrayView2<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut y = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in y.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *is = 1.0 / (var + LN_EPS).sqrt();
        row *= *is;
    }
    let out = y.clone();
    (out, LnCache { y, inv_std })
}

pub fn layer_norm_backward(dy: ArrayView2<f64>, cache: &LnCache) -> Array2<f64> {
    let d = dy.ncols() as f64;
    let mut dx = dy.to_owned();
    for ((mut row, y), is) in dx.rows_mut().into_iter().zip(cache.y.rows()).zip(&cache.inv_std) {
        let mean_dy = row.sum() / d;
        let mean_dyy = row.dot(&y) / d;
        Zip::from(&mut row)
            .and(&y)
            .for_each(|g, &yv| *g = is * (*g - mean_dy - yv * mean_dyy));
    }
    dx
}

/// Tanh-approximated GELU.
pub fn gelu(x: ArrayView2<f64>) -> Array2<f64> {
    x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh()))
}

pub fn gelu_backward(x: ArrayView2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
    let mut dx = dy.to_owned();
    Zip::from(&mut dx).and(&x).for_each(|g, &v| {
        let th = (GELU_C * (v + GELU_K * v * v * v)).tanh();
        let d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * v * v);
        *g *= d;
    });
    dx
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Multi-head scaled dot-product attention; queries come from the first
/// input, keys and values from the second. `W_q, W_k, W_v` have no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub out: Linear,
}

#[derive(Debug, Clone)]
pub struct AttnCache {
    x: Array2<f64>,
    y: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per-head `N_q × N_kv` attention weights.
    pub probs: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

impl Attention {
    pub fn new(rng: &mut impl Rng, dim: usize, gain: f64) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        Self {
            wq: init_matrix(rng, dim, dim, std),
            wk: init_matrix(rng, dim, dim, std),
            wv: init_matrix(rng, dim, dim, std),
            out: Linear::new(rng, dim, dim, gain),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            wq: Array2::zeros((dim, dim)),
            wk: Array2::zeros((dim, dim)),
            wv: Array2::zeros((dim, dim)),
            out: Linear::zeros(dim, dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>, y: ArrayView2<f64>, heads: usize) -> (Array2<f64>, AttnCache) {
        let q = x.dot(&self.wq);
        let k = y.dot(&self.wk);
        let v = y.dot(&self.wv);
        let d = q.ncols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut concat = Array2::zeros((x.nrows(), d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut a);
            concat.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
            probs.push(a);
        }
        let out = self.out.forward(concat.view());
        let cache = AttnCache {
            x: x.to_owned(),
            y: y.to_owned(),
            q,
            k,
            v,
            probs,
            concat,
        };
        (out, cache)
    }

    /// Returns gradients with respect to the query and key/value inputs.
    pub fn backward(&self, cache: &AttnCache, dout: ArrayView2<f64>, heads: usize, grad: &mut Attention) -> (Array2<f64>, Array2<f64>) {
        let dconcat = self.out.backward(cache.concat.view(), dout, &mut grad.out);
        let d = cache.q.ncols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, a) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let doh = dconcat.slice(cols);
            let da = doh.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&doh));
            let mut ds = &da * a;
            for (mut row, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
                let dot = row.sum();
                Zip::from(&mut row).and(&arow).for_each(|g, &p| *g -= p * dot);
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        grad.wq += &cache.x.t().dot(&dq);
        grad.wk += &cache.y.t().dot(&dk);
        grad.wv += &cache.y.t().dot(&dv);
        let dx = dq.dot(&self.wq.t());
        let dy = dk.dot(&self.wk.t()) + dv.dot(&self.wv.t());
        (dx, dy)
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Array2<f64>)) {
        f(format!("{prefix}.wq"), &self.wq);
        f(format!("{prefix}.wk"), &self.wk);
        f(format!("{prefix}.wv"), &self.wv);
        self.out.visit(&format!("{prefix}.wo"), f);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Array2<f64>)) {
        f(format!("{prefix}.wq"), &mut self.wq);
        f(format!("{prefix}.wk"), &mut self.wk);
        f(format!("{prefix}.wv"), &mut self.wv);
        self.out.visit_mut(&format!("{prefix}.wo"), f);
    }
}
