//! Additive angular margin softmax.
//!
//! With `c_j = cos(theta_j)` between the normalized embedding and the
//! normalized class column `j`, the target logit is `s * cos(theta_y + m)`
//! and every other logit is `s * c_j`. When `theta_y + m` would pass `pi`
//! the target falls back to `s * (c_y - m * sin(m))`, which keeps the logit
//! monotonic in `c_y`.

use super::{Projection, TdnnError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AamParams {
    pub margin: f64,
    pub scale: f64,
}

impl Default for AamParams {
    fn default() -> Self {
        Self { margin: 0.2, scale: 32.0 }
    }
}

#[derive(Debug, Clone)]
pub struct AamOutput {
    pub loss: f64,
    pub d_embedding: Vec<f64>,
    /// Same layout as [`Projection::weight`].
    pub d_projection: Vec<f64>,
    pub cosines: Vec<f64>,
}

/// Margin-adjusted target cosine and its derivative in `c`.
pub fn target_logit(c: f64, margin: f64) -> (f64, f64) {
    let c = c.clamp(-1.0, 1.0);
    if c >= (std::f64::consts::PI - margin).cos() {
        let sin = (1.0 - c * c).max(1e-12).sqrt();
        let (sm, cm) = margin.sin_cos();
        (c * cm - sin * sm, cm + c * sm / sin)
    } else {
        (c - margin * margin.sin(), 1.0)
    }
}

pub fn aam_loss(embedding: &[f64], proj: &Projection, label: usize, aam: AamParams) -> Result<AamOutput, TdnnError> {
    let (rows, classes) = (proj.rows, proj.classes);
    if label >= classes {
        return Err(TdnnError::BadLabel { label, classes });
    }
    if embedding.len() != rows {
        return Err(TdnnError::DimMismatch(embedding.len(), rows));
    }
    let e_norm = embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
    if e_norm == 0.0 {
        return Err(TdnnError::ZeroNorm("embedding"));
    }
    let e_hat: Vec<f64> = embedding.iter().map(|v| v / e_norm).collect();

    let mut w_norm = vec![0.0; classes];
    for i in 0..rows {
        for (j, n) in w_norm.iter_mut().enumerate() {
            let w = proj.weight[i * classes + j];
            *n += w * w;
        }
    }
    for n in &mut w_norm {
        *n = n.sqrt();
        if *n == 0.0 {
            return Err(TdnnError::ZeroNorm("projection column"));
        }
    }
    let mut cosines = vec![0.0; classes];
    for i in 0..rows {
        for j in 0..classes {
            cosines[j] += e_hat[i] * proj.weight[i * classes + j];
        }
    }
    for (c, n) in cosines.iter_mut().zip(&w_norm) {
        *c /= n;
    }

    let (phi, dphi) = target_logit(cosines[label], aam.margin);
    let logits: Vec<f64> =
        cosines.iter().enumerate().map(|(j, &c)| aam.scale * if j == label { phi } else { c }).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let loss = max + sum.ln() - logits[label];

    // dL/dc_j
    let d_cos: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(j, z)| {
            let p = (z - max).exp() / sum;
            let dz = if j == label { p - 1.0 } else { p };
            aam.scale * dz * if j == label { dphi } else { 1.0 }
        })
        .collect();

    let mut d_embedding = vec![0.0; rows];
    let mut d_projection = vec![0.0; rows * classes];
    for i in 0..rows {
        for j in 0..classes {
            let w_hat = proj.weight[i * classes + j] / w_norm[j];
            let c = cosines[j];
            d_embedding[i] += d_cos[j] * (w_hat - c * e_hat[i]) / e_norm;
            d_projection[i * classes + j] = d_cos[j] * (e_hat[i] - c * w_hat) / w_norm[j];
        }
    }
    Ok(AamOutput { loss, d_embedding, d_projection, cosines })
}
