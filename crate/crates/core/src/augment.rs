//! Acoustic augmentation: additive noise at a target SNR and reverberation
//! by convolution with a room impulse response.
//!
//! Results saturate to the 16-bit range; the number of clipped samples is
//! reported instead of rescaling.

use rand::Rng;
use thiserror::Error;

use crate::corpus::wav::{WavError, Waveform};
use crate::seed;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("speech has zero power")]
    SilentSpeech,
    #[error("noise has zero power over the mixed region")]
    SilentNoise,
    #[error("empty noise signal")]
    EmptyNoise,
    #[error("sample rates differ: speech {speech} Hz, other {other} Hz")]
    RateMismatch { speech: u32, other: u32 },
    #[error("impulse response is empty")]
    EmptyRir,
    #[error("impulse response has zero peak")]
    ZeroRir,
    #[error("augmentation expects mono input, got {0} channels")]
    NotMono(usize),
    #[error(transparent)]
    Wav(#[from] WavError),
}

#[derive(Debug, Clone)]
pub struct Augmented {
    pub waveform: Waveform,
    pub clipped: usize,
}

fn power(x: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = x.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn saturate(values: impl Iterator<Item = f64>) -> (Vec<i16>, usize) {
    let mut clipped = 0;
    let out = values
        .map(|v| {
            let r = v.round();
            if r > f64::from(i16::MAX) {
                clipped += 1;
                i16::MAX
            } else if r < f64::from(i16::MIN) {
                clipped += 1;
                i16::MIN
            } else {
                r as i16
            }
        })
        .collect();
    (out, clipped)
}

/// Noise gain giving `snr_db` between the two powers.
pub fn snr_gain(speech_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (speech_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Mix `noise` into `speech` at `snr_db`.
///
/// The noise is read from a seeded random offset and looped when shorter than
/// the speech. The gain is measured over exactly the region that is mixed.
pub fn mix_noise(speech: &Waveform, noise: &Waveform, snr_db: f64, seed: u64) -> Result<Augmented, AugmentError> {
    if !speech.is_mono() {
        return Err(AugmentError::NotMono(speech.num_channels()));
    }
    if speech.sample_rate() != noise.sample_rate() {
        return Err(AugmentError::RateMismatch { speech: speech.sample_rate(), other: noise.sample_rate() });
    }
    let s = speech.samples();
    let n = noise.samples();
    if n.is_empty() {
        return Err(AugmentError::EmptyNoise);
    }
    let p_speech = power(s.iter().map(|&v| f64::from(v)));
    if p_speech == 0.0 {
        return Err(AugmentError::SilentSpeech);
    }
    let offset = seed::stream(seed, "mix_noise", 0).gen_range(0..n.len() as u64) as usize;
    let segment = |i: usize| f64::from(n[(offset + i) % n.len()]);
    let p_noise = power((0..s.len()).map(segment));
    if p_noise == 0.0 {
        return Err(AugmentError::SilentNoise);
    }
    let g = snr_gain(p_speech, p_noise, snr_db);
    let (out, clipped) = saturate(s.iter().enumerate().map(|(i, &v)| f64::from(v) + g * segment(i)));
    Ok(Augmented { waveform: Waveform::mono(out, speech.sample_rate())?, clipped })
}

/// Direct-form linear convolution truncated to `x.len()`.
pub fn convolve_truncated(x: &[f64], rir: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (n, out) in y.iter_mut().enumerate() {
        let taps = rir.len().min(n + 1);
        *out = (0..taps).map(|k| rir[k] * x[n - k]).sum();
    }
    y
}

/// Reverberate by convolving with `rir`, then rescale to the input's peak.
pub fn convolve_rir(speech: &Waveform, rir: &[f64]) -> Result<Augmented, AugmentError> {
    if !speech.is_mono() {
        return Err(AugmentError::NotMono(speech.num_channels()));
    }
    if rir.is_empty() {
        return Err(AugmentError::EmptyRir);
    }
    if rir.iter().all(|&h| h == 0.0) {
        return Err(AugmentError::ZeroRir);
    }
    let x: Vec<f64> = speech.samples().iter().map(|&v| f64::from(v)).collect();
    let y = convolve_truncated(&x, rir);
    let peak_in = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let peak_out = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak_out > 0.0 { peak_in / peak_out } else { 0.0 };
    let (out, clipped) = saturate(y.into_iter().map(|v| v * scale));
    Ok(Augmented { waveform: Waveform::mono(out, speech.sample_rate())?, clipped })
}

/// SNR in dB between a clean signal and the difference to its noisy version.
pub fn measure_snr_db(clean: &[i16], noisy: &[i16]) -> f64 {
    let ps = power(clean.iter().map(|&v| f64::from(v)));
    let pn = power(clean.iter().zip(noisy).map(|(&a, &b)| f64::from(b) - f64::from(a)));
    10.0 * (ps / pn).log10()
}
