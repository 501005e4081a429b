//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::path::Path;

/// FAR and FRR for "accept iff score >= threshold", by direct counting.
pub fn rates(tar: &[f64], non: &[f64], threshold: f64) -> (f64, f64) {
    let fa = non.iter().filter(|&&s| s >= threshold).count() as f64 / non.len() as f64;
    let fr = tar.iter().filter(|&&s| s < threshold).count() as f64 / tar.len() as f64;
    (fa, fr)
}

/// Thresholds between every pair of adjacent distinct scores, plus both ends.
pub fn midpoint_grid(tar: &[f64], non: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = tar.iter().chain(non).copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup();
    let mut grid = vec![all[0] - 1.0];
    grid.extend(all.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    grid.push(all[all.len() - 1] + 1.0);
    grid
}

/// EER by scanning the midpoint grid and interpolating the first crossing.
pub fn brute_eer(tar: &[f64], non: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = midpoint_grid(tar, non).into_iter().map(|t| rates(tar, non, t)).collect();
    for w in pts.windows(2) {
        let ((fa0, fr0), (fa1, fr1)) = (w[0], w[1]);
        let d0 = fa0 - fr0;
        let d1 = fa1 - fr1;
        if d0 == 0.0 {
            return fa0;
        }
        if d0 > 0.0 && d1 <= 0.0 {
            // Solve fa(t) = fr(t) on the straight segment.
            let t = d0 / (d0 - d1);
            return fa0 + t * (fa1 - fa0);
        }
    }
    unreachable!("the last grid point always has FAR 0 and FRR 1")
}

/// Normalized minimum DCF over every distinct score and both sentinels.
pub fn brute_min_dcf(tar: &[f64], non: &[f64], p_tar: f64, c_miss: f64, c_fa: f64) -> f64 {
    let mut thresholds: Vec<f64> = tar.iter().chain(non).copied().collect();
    thresholds.push(f64::NEG_INFINITY);
    thresholds.push(f64::INFINITY);
    let norm = (c_miss * p_tar).min(c_fa * (1.0 - p_tar));
    thresholds
        .into_iter()
        .map(|t| {
            let (fa, fr) = rates(tar, non, t);
            (c_miss * p_tar * fr + c_fa * (1.0 - p_tar) * fa) / norm
        })
        .fold(f64::INFINITY, f64::min)
}

/// Little-endian PCM payload of a 16-bit WAV file, found by walking chunks.
pub fn wav_payload(path: &Path) -> Vec<u8> {
    let bytes = std::fs::read(path).unwrap();
    assert_eq!(&bytes[0..4], b"RIFF");
    assert_eq!(&bytes[8..12], b"WAVE");
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let len = u32::from_le_bytes(bytes[at + 4..at + 8].try_into().unwrap()) as usize;
        if id == b"data" {
            return bytes[at + 8..at + 8 + len].to_vec();
        }
        at += 8 + len + (len & 1);
    }
    panic!("{}: no data chunk", path.display());
}

/// Bytes `[start, end)` in samples of a mono 16-bit WAV file.
pub fn wav_slice(path: &Path, start: usize, end: usize) -> Vec<u8> {
    wav_payload(path)[2 * start..2 * end].to_vec()
}

/// Geometric mean of per-unit window maxima of a smoothed stream, maximised
/// over frames. `rows[t][k]` are raw posteriors.
pub fn kws_oracle(rows: &[Vec<f64>], units: &[usize], w_smooth: usize, w_max: usize) -> f64 {
    let t_len = rows.len();
    let smooth: Vec<Vec<f64>> = (0..t_len)
        .map(|j| {
            let h = (j + 1).saturating_sub(w_smooth);
            (0..rows[0].len()).map(|k| (h..=j).map(|t| rows[t][k]).sum::<f64>() / (j - h + 1) as f64).collect()
        })
        .collect();
    (0..t_len)
        .map(|j| {
            let h = (j + 1).saturating_sub(w_max);
            let prod: f64 = units.iter().map(|&k| (h..=j).map(|t| smooth[t][k]).fold(0.0, f64::max)).product();
            prod.powf(1.0 / units.len() as f64)
        })
        .fold(0.0, f64::max)
}

/// Upper-tail probability of a chi-square variable with `k` degrees of
/// freedom, via the Wilson-Hilferty normal approximation.
pub fn chi_square_p(stat: f64, k: usize) -> f64 {
    let k = k as f64;
    let z = ((stat / k).powf(1.0 / 3.0) - (1.0 - 2.0 / (9.0 * k))) / (2.0 / (9.0 * k)).sqrt();
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    // Numerical Recipes erfcc, fractional error below 1.2e-7.
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
            .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Relative difference with a floor for values that are both near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Every file under `dir`, as (relative path, bytes), sorted.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
