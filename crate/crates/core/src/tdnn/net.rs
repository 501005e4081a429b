//! Forward and backward passes.

use super::{Affine, Embedding, TdnnError, TdnnParams};
use crate::features::FeatureMatrix;

/// Variance floor inside the pooled standard deviation.
pub const VARIANCE_FLOOR: f64 = 1e-10;

/// Stack input rows `t + offset` (relative to the lowest offset) side by side.
pub fn splice(input: &[f64], rows: usize, dim: usize, offsets: &[i32]) -> (Vec<f64>, usize) {
    let lo = *offsets.iter().min().unwrap();
    let hi = *offsets.iter().max().unwrap();
    let out_rows = rows.saturating_sub((hi - lo) as usize);
    let mut out = Vec::with_capacity(out_rows * dim * offsets.len());
    for k in 0..out_rows {
        for &o in offsets {
            let src = (k as i32 - lo + o) as usize;
            out.extend_from_slice(&input[src * dim..(src + 1) * dim]);
        }
    }
    (out, out_rows)
}

fn splice_backward(d_out: &[f64], out_rows: usize, dim: usize, offsets: &[i32], in_rows: usize) -> Vec<f64> {
    let lo = *offsets.iter().min().unwrap();
    let mut d_in = vec![0.0; in_rows * dim];
    let width = dim * offsets.len();
    for k in 0..out_rows {
        for (j, &o) in offsets.iter().enumerate() {
            let src = (k as i32 - lo + o) as usize;
            let from = &d_out[k * width + j * dim..k * width + (j + 1) * dim];
            for (d, g) in d_in[src * dim..(src + 1) * dim].iter_mut().zip(from) {
                *d += g;
            }
        }
    }
    d_in
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn affine_forward(layer: &Affine, x: &[f64], rows: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * layer.output_dim);
    for k in 0..rows {
        let xk = &x[k * layer.input_dim..(k + 1) * layer.input_dim];
        for i in 0..layer.output_dim {
            out.push(layer.bias[i] + dot(layer.weight_row(i), xk));
        }
    }
    out
}

/// Accumulate weight/bias gradients into `grad`; return the input gradient if asked.
fn affine_backward(
    layer: &Affine,
    x: &[f64],
    d_out: &[f64],
    rows: usize,
    grad: &mut Affine,
    want_input: bool,
) -> Vec<f64> {
    let (ni, no) = (layer.input_dim, layer.output_dim);
    let mut d_in = if want_input { vec![0.0; rows * ni] } else { Vec::new() };
    for k in 0..rows {
        let xk = &x[k * ni..(k + 1) * ni];
        for i in 0..no {
            let g = d_out[k * no + i];
            if g == 0.0 {
                continue;
            }
            grad.bias[i] += g;
            axpy(g, xk, &mut grad.weight[i * ni..(i + 1) * ni]);
            if want_input {
                axpy(g, layer.weight_row(i), &mut d_in[k * ni..(k + 1) * ni]);
            }
        }
    }
    d_in
}

/// Concatenated per-dimension mean and standard deviation over `rows`.
pub fn stats_pool(h: &[f64], rows: usize, dim: usize) -> Vec<f64> {
    let n = rows as f64;
    let mut mean = vec![0.0; dim];
    for k in 0..rows {
        axpy(1.0, &h[k * dim..(k + 1) * dim], &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for k in 0..rows {
        for d in 0..dim {
            let c = h[k * dim + d] - mean[d];
            var[d] += c * c / n;
        }
    }
    mean.extend(var.into_iter().map(|v| (v + VARIANCE_FLOOR).sqrt()));
    mean
}

fn stats_pool_backward(h: &[f64], rows: usize, dim: usize, pooled: &[f64], d_pooled: &[f64]) -> Vec<f64> {
    let n = rows as f64;
    let (mean, std) = pooled.split_at(dim);
    let (d_mean, d_std) = d_pooled.split_at(dim);
    let mut d_h = vec![0.0; rows * dim];
    for k in 0..rows {
        for d in 0..dim {
            d_h[k * dim + d] = d_mean[d] / n + d_std[d] * (h[k * dim + d] - mean[d]) / (n * std[d]);
        }
    }
    d_h
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input_frames: usize,
    /// Spliced input of each frame layer.
    pub spliced: Vec<Vec<f64>>,
    /// Rows at each frame layer.
    pub rows: Vec<usize>,
    /// Rectified output of each frame layer.
    pub activations: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
    pub embedding: Embedding,
}

impl ForwardCache {
    /// `(name, rows, input dim, output dim)` for every layer up to the embedding.
    pub fn shape_trace(&self, p: &TdnnParams) -> Vec<(String, usize, usize, usize)> {
        let mut out: Vec<_> = p
            .config
            .frame_layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let rows = self.rows[i];
                (l.name.clone(), rows, self.spliced[i].len() / rows.max(1), self.activations[i].len() / rows.max(1))
            })
            .collect();
        let top = self.rows.last().copied().unwrap_or(1).max(1);
        let last = self.activations.last().unwrap();
        out.push(("stats-pool".into(), 1, last.len() / top, self.pooled.len()));
        out.push(("segment6".into(), 1, self.pooled.len(), self.embedding.len()));
        out
    }
}

pub fn forward_cached(p: &TdnnParams, f: &FeatureMatrix) -> Result<ForwardCache, TdnnError> {
    let cfg = &p.config;
    if f.dims() != cfg.feat_dim {
        return Err(TdnnError::InputDim { found: f.dims(), expected: cfg.feat_dim });
    }
    let needed = cfg.receptive_field();
    if f.frames() < needed {
        return Err(TdnnError::TooFewFrames { frames: f.frames(), needed });
    }
    let mut spliced = Vec::new();
    let mut rows = Vec::new();
    let mut activations: Vec<Vec<f64>> = Vec::new();
    let (mut cur_rows, mut cur_dim) = (f.frames(), f.dims());
    for (spec, layer) in cfg.frame_layers.iter().zip(&p.frame) {
        let input = activations.last().map(Vec::as_slice).unwrap_or(f.as_slice());
        let (x, n) = splice(input, cur_rows, cur_dim, &spec.offsets);
        let mut h = affine_forward(layer, &x, n);
        for v in &mut h {
            *v = v.max(0.0);
        }
        spliced.push(x);
        rows.push(n);
        activations.push(h);
        cur_rows = n;
        cur_dim = layer.output_dim;
    }
    let pooled = stats_pool(activations.last().unwrap(), cur_rows, cur_dim);
    let embedding = Embedding(affine_forward(&p.segment6, &pooled, 1));
    Ok(ForwardCache { input_frames: f.frames(), spliced, rows, activations, pooled, embedding })
}

/// Cosine between the embedding and each projection column.
pub fn cosine_logits(p: &TdnnParams, e: &Embedding) -> Vec<f64> {
    let en = dot(&e.0, &e.0).sqrt();
    (0..p.projection.classes)
        .map(|j| {
            let w = p.projection.column(j);
            let wn = dot(&w, &w).sqrt();
            if en == 0.0 || wn == 0.0 {
                0.0
            } else {
                dot(&e.0, &w) / (en * wn)
            }
        })
        .collect()
}

/// Embedding and per-class cosine logits.
pub fn forward(p: &TdnnParams, f: &FeatureMatrix) -> Result<(Embedding, Vec<f64>), TdnnError> {
    let cache = forward_cached(p, f)?;
    let logits = cosine_logits(p, &cache.embedding);
    Ok((cache.embedding, logits))
}

/// Output of the top frame layer, one row per pooled frame.
pub fn frame_outputs(p: &TdnnParams, f: &FeatureMatrix) -> Result<FeatureMatrix, TdnnError> {
    let cache = forward_cached(p, f)?;
    let rows = *cache.rows.last().unwrap();
    let dim = p.frame.last().unwrap().output_dim;
    FeatureMatrix::new(rows, dim, cache.activations.last().unwrap().clone())
        .map_err(|e| TdnnError::Format(e.to_string()))
}

/// Gradients of every layer below the projection given dLoss/dEmbedding.
/// The projection part of the returned params is zero.
pub fn backward(p: &TdnnParams, cache: &ForwardCache, d_embedding: &[f64]) -> TdnnParams {
    let mut grads = p.zeros_like();
    let d_pooled = affine_backward(&p.segment6, &cache.pooled, d_embedding, 1, &mut grads.segment6, true);
    let top = cache.activations.len() - 1;
    let top_dim = p.frame[top].output_dim;
    let mut d_h = stats_pool_backward(&cache.activations[top], cache.rows[top], top_dim, &cache.pooled, &d_pooled);
    for i in (0..cache.activations.len()).rev() {
        for (g, &a) in d_h.iter_mut().zip(&cache.activations[i]) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        let want_input = i > 0;
        let d_x = affine_backward(&p.frame[i], &cache.spliced[i], &d_h, cache.rows[i], &mut grads.frame[i], want_input);
        if want_input {
            let below_rows = cache.rows[i - 1];
            let below_dim = p.frame[i - 1].output_dim;
            d_h = splice_backward(&d_x, cache.rows[i], below_dim, &p.config.frame_layers[i].offsets, below_rows);
        }
    }
    grads
}
