use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureError, FeatureMatrix, FBANK_DIM};
use crate::corpus::wav::Waveform;

/// Log mel filterbank front end. Samples are used at their raw 16-bit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FbankConfig {
    pub frame_shift_secs: f64,
    pub frame_width_secs: f64,
    pub num_mel_bins: usize,
    pub low_freq_hz: f64,
    /// 0 means the Nyquist frequency.
    pub high_freq_hz: f64,
    pub preemphasis: f64,
    pub energy_floor: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            frame_shift_secs: 0.010,
            frame_width_secs: 0.025,
            num_mel_bins: FBANK_DIM,
            low_freq_hz: 20.0,
            high_freq_hz: 0.0,
            preemphasis: 0.97,
            energy_floor: 1e-10,
        }
    }
}

impl FbankConfig {
    pub fn window_samples(&self, rate: u32) -> usize {
        (self.frame_width_secs * f64::from(rate)).round() as usize
    }

    pub fn shift_samples(&self, rate: u32) -> usize {
        (self.frame_shift_secs * f64::from(rate)).round() as usize
    }

    /// `1 + floor((n - win) / shift)`, or 0 when shorter than one window.
    pub fn num_frames(&self, samples: usize, rate: u32) -> usize {
        let win = self.window_samples(rate);
        if samples < win {
            0
        } else {
            1 + (samples - win) / self.shift_samples(rate)
        }
    }
}

fn mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

/// Triangular filters over FFT bins `0..=fft/2`, equally spaced on the mel scale.
pub fn mel_filters(cfg: &FbankConfig, rate: u32, fft_len: usize) -> Vec<Vec<(usize, f64)>> {
    let nyquist = f64::from(rate) / 2.0;
    let high = if cfg.high_freq_hz > 0.0 { cfg.high_freq_hz.min(nyquist) } else { nyquist };
    let (lo, hi) = (mel(cfg.low_freq_hz), mel(high));
    let delta = (hi - lo) / (cfg.num_mel_bins + 1) as f64;
    let bin_mel: Vec<f64> = (0..=fft_len / 2).map(|k| mel(k as f64 * f64::from(rate) / fft_len as f64)).collect();
    (0..cfg.num_mel_bins)
        .map(|m| {
            let left = lo + m as f64 * delta;
            let center = left + delta;
            let right = center + delta;
            bin_mel
                .iter()
                .enumerate()
                .filter_map(|(k, &b)| {
                    let w = if b > left && b <= center {
                        (b - left) / (center - left)
                    } else if b > center && b < right {
                        (right - b) / (right - center)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((k, w))
                })
                .collect()
        })
        .collect()
}

/// Reusable fbank extractor for one sample rate.
pub struct Fbank {
    cfg: FbankConfig,
    rate: u32,
    window: Vec<f64>,
    filters: Vec<Vec<(usize, f64)>>,
    fft: Arc<dyn Fft<f64>>,
    fft_len: usize,
}

impl Fbank {
    pub fn new(cfg: FbankConfig, rate: u32) -> Self {
        let win = cfg.window_samples(rate);
        let fft_len = win.next_power_of_two();
        let window =
            (0..win).map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (win - 1) as f64).cos()).collect();
        let filters = mel_filters(&cfg, rate, fft_len);
        let fft = FftPlanner::new().plan_fft_forward(fft_len);
        Self { cfg, rate, window, filters, fft, fft_len }
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    pub fn compute(&self, samples: &[i16]) -> Result<FeatureMatrix, FeatureError> {
        let win = self.window.len();
        let shift = self.cfg.shift_samples(self.rate);
        let frames = self.cfg.num_frames(samples.len(), self.rate);
        if frames == 0 {
            return Err(FeatureError::TooShort { samples: samples.len(), window: win });
        }
        let dims = self.filters.len();
        let mut data = Vec::with_capacity(frames * dims);
        let mut frame = vec![0.0f64; win];
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_len];
        let mut power = vec![0.0f64; self.fft_len / 2 + 1];
        for t in 0..frames {
            for (dst, &s) in frame.iter_mut().zip(&samples[t * shift..t * shift + win]) {
                *dst = f64::from(s);
            }
            for i in (1..win).rev() {
                frame[i] -= self.cfg.preemphasis * frame[i - 1];
            }
            frame[0] -= self.cfg.preemphasis * frame[0];
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < win { Complex::new(frame[i] * self.window[i], 0.0) } else { Complex::new(0.0, 0.0) };
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for filt in &self.filters {
                let e: f64 = filt.iter().map(|&(k, w)| w * power[k]).sum();
                data.push(e.max(self.cfg.energy_floor).ln());
            }
        }
        FeatureMatrix::new(frames, dims, data)
    }
}

/// 40-dim log mel filterbank with 25 ms windows every 10 ms.
pub fn compute_fbank(w: &Waveform) -> Result<FeatureMatrix, FeatureError> {
    compute_fbank_with(w, &FbankConfig::default())
}

pub fn compute_fbank_with(w: &Waveform, cfg: &FbankConfig) -> Result<FeatureMatrix, FeatureError> {
    if !w.is_mono() {
        return Err(FeatureError::NotMono(w.num_channels()));
    }
    Fbank::new(cfg.clone(), w.sample_rate()).compute(w.samples())
}
