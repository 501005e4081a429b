//! Plain full-batch gradient descent.

use super::net::{backward, forward_cached};
use super::{aam_loss, AamParams, TdnnError, TdnnParams};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    pub aam: AamParams,
    pub workers: usize,
}

/// AAM loss of one labelled utterance.
pub fn example_loss(p: &TdnnParams, f: &FeatureMatrix, label: usize, aam: AamParams) -> Result<f64, TdnnError> {
    let cache = forward_cached(p, f)?;
    Ok(aam_loss(&cache.embedding.0, &p.projection, label, aam)?.loss)
}

/// Loss and full parameter gradient for one labelled utterance.
pub fn example_gradient(
    p: &TdnnParams,
    f: &FeatureMatrix,
    label: usize,
    aam: AamParams,
) -> Result<(f64, TdnnParams), TdnnError> {
    let cache = forward_cached(p, f)?;
    let out = aam_loss(&cache.embedding.0, &p.projection, label, aam)?;
    let mut grads = backward(p, &cache, &out.d_embedding);
    grads.projection.weight = out.d_projection;
    Ok((out.loss, grads))
}

/// One gradient-descent update on the batch-mean loss. Per-item gradients may
/// be computed in parallel; they are always summed in batch order.
pub fn train_step(
    p: &TdnnParams,
    batch: &[(FeatureMatrix, usize)],
    lr: f64,
    opts: TrainOptions,
) -> Result<(TdnnParams, f64), TdnnError> {
    if batch.is_empty() {
        return Err(TdnnError::EmptyBatch);
    }
    if !(lr >= 0.0) {
        return Err(TdnnError::BadLearningRate(lr));
    }
    let results = crate::pipeline::par_map(batch, opts.workers, |(f, label)| example_gradient(p, f, *label, opts.aam));
    let mut total = p.zeros_like();
    let mut loss_sum = 0.0;
    for (item, r) in results.into_iter().enumerate() {
        let (loss, g) = r?;
        if !loss.is_finite() {
            return Err(TdnnError::NonFinite { loss, item });
        }
        loss_sum += loss;
        total.add_scaled(1.0, &g);
    }
    let n = batch.len() as f64;
    let mut next = p.clone();
    if lr > 0.0 {
        next.add_scaled(-lr / n, &total);
    }
    Ok((next, loss_sum / n))
}
