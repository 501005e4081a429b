use std::ops::Range;

use rand::Rng;

use super::FeatureMatrix;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskValue {
    Constant(f64),
    /// Mean over all cells of the input matrix.
    UtteranceMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecAugmentParams {
    pub max_freq_mask_width: usize,
    pub num_freq_masks: usize,
    pub max_time_mask_width: usize,
    pub num_time_masks: usize,
    pub mask_value: MaskValue,
}

impl Default for SpecAugmentParams {
    fn default() -> Self {
        Self {
            max_freq_mask_width: 8,
            num_freq_masks: 1,
            max_time_mask_width: 20,
            num_time_masks: 1,
            mask_value: MaskValue::UtteranceMean,
        }
    }
}

impl SpecAugmentParams {
    pub fn disabled() -> Self {
        Self {
            max_freq_mask_width: 0,
            num_freq_masks: 0,
            max_time_mask_width: 0,
            num_time_masks: 0,
            mask_value: MaskValue::UtteranceMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Masks {
    pub freq: Vec<Range<usize>>,
    pub time: Vec<Range<usize>>,
}

impl Masks {
    pub fn covers(&self, t: usize, d: usize) -> bool {
        self.freq.iter().any(|r| r.contains(&d)) || self.time.iter().any(|r| r.contains(&t))
    }
}

fn draw(rng: &mut impl Rng, max_width: usize, extent: usize) -> Range<usize> {
    let w = (rng.gen_range(0..=max_width as u64) as usize).min(extent);
    let start = rng.gen_range(0..=(extent - w) as u64) as usize;
    start..start + w
}

/// The mask bands [`spec_augment`] applies for the given shape and seed.
/// Widths are uniform on `[0, max]`, offsets uniform over valid positions.
pub fn spec_augment_masks(frames: usize, dims: usize, p: &SpecAugmentParams, seed: u64) -> Masks {
    let mut rng = seed::stream(seed, "specaugment", 0);
    let freq = (0..p.num_freq_masks).map(|_| draw(&mut rng, p.max_freq_mask_width, dims)).collect();
    let time = (0..p.num_time_masks).map(|_| draw(&mut rng, p.max_time_mask_width, frames)).collect();
    Masks { freq, time }
}

pub fn spec_augment(f: &FeatureMatrix, p: &SpecAugmentParams, seed: u64) -> FeatureMatrix {
    let masks = spec_augment_masks(f.frames(), f.dims(), p, seed);
    let value = match p.mask_value {
        MaskValue::Constant(v) => v,
        MaskValue::UtteranceMean => f.mean(),
    };
    let mut out = f.clone();
    for r in &masks.freq {
        for t in 0..f.frames() {
            for d in r.clone() {
                out.set(t, d, value);
            }
        }
    }
    for r in &masks.time {
        for t in r.clone() {
            out.row_mut(t).fill(value);
        }
    }
    out
}
