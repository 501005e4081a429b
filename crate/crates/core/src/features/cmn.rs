use super::FeatureMatrix;

pub const DEFAULT_CMN_WINDOW: usize = 300;

/// Frame range `[lo, hi)` averaged for frame `t`: the window
/// `[t - (w-1)/2, t + w/2]` clipped to the matrix.
pub fn cmn_window(t: usize, frames: usize, window: usize) -> (usize, usize) {
    let lo = t.saturating_sub((window - 1) / 2);
    let hi = (t + window / 2 + 1).min(frames);
    (lo, hi)
}

/// Subtract from every frame the per-dimension mean of its centered window
/// of up to `window` frames.
pub fn sliding_mean_normalize(f: &FeatureMatrix, window: usize) -> FeatureMatrix {
    assert!(window >= 1, "CMN window must be at least one frame");
    let (frames, dims) = (f.frames(), f.dims());
    let mut prefix = vec![0.0f64; (frames + 1) * dims];
    for t in 0..frames {
        for d in 0..dims {
            prefix[(t + 1) * dims + d] = prefix[t * dims + d] + f.get(t, d);
        }
    }
    let mut out = FeatureMatrix::zeros(frames, dims);
    for t in 0..frames {
        let (lo, hi) = cmn_window(t, frames, window);
        let n = (hi - lo) as f64;
        for d in 0..dims {
            let mean = (prefix[hi * dims + d] - prefix[lo * dims + d]) / n;
            out.set(t, d, f.get(t, d) - mean);
        }
    }
    out
}
