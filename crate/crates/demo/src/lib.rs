//! Browser demo of three toolkit operations: render a synthesized
//! utterance, look at its fbank with SpecAugment masks, and measure a
//! score distribution. The plain functions are native and tested; the
//! `#[wasm_bindgen]` wrappers only translate errors.

use std::collections::BTreeSet;

use unitcat::corpus::alignment::default_silence_labels;
use unitcat::features::specaug::spec_augment_masks;
use unitcat::features::{compute_fbank, spec_augment, MaskValue, SpecAugmentParams};
use unitcat::fixture::{speaker_id, tone_utterance, words};
use unitcat::scoring::{evaluate, DcfParams, ScoreSet};
use unitcat::segment::{build_library, extract_segments, unit_set};
use unitcat::synth::{plan_synthesis, render};
use unitcat::{seed, UnitLibrary, Waveform};
use wasm_bindgen::prelude::*;

pub const TRANSCRIPT: &str = "ni hao mi ya";
/// Source utterances recorded per demo speaker.
const SOURCE_UTTERANCES: usize = 3;

/// A rendered utterance and where each unit starts.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Rendered {
    samples: Vec<i16>,
    starts: Vec<u32>,
    choices: Vec<u32>,
    candidates: Vec<u32>,
    sample_rate: u32,
}

#[wasm_bindgen]
impl Rendered {
    pub fn samples(&self) -> Vec<i16> {
        self.samples.clone()
    }
    /// Sample offset of each unit, plus the total length.
    pub fn starts(&self) -> Vec<u32> {
        self.starts.clone()
    }
    /// The segment picked for each unit.
    pub fn choices(&self) -> Vec<u32> {
        self.choices.clone()
    }
    /// How many segments each unit could have used.
    pub fn candidates(&self) -> Vec<u32> {
        self.candidates.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }
    pub fn units(&self) -> String {
        TRANSCRIPT.to_string()
    }
}

/// The unit library of demo speaker `speaker`, cut from tone recordings.
pub fn demo_library(speaker: usize, corpus_seed: u64) -> Result<UnitLibrary, String> {
    let transcript = words(TRANSCRIPT);
    let spk = speaker_id(speaker);
    let silence: BTreeSet<String> = default_silence_labels();
    let mut segments = Vec::new();
    for u in 0..SOURCE_UTTERANCES {
        let mut rng = seed::stream(corpus_seed, &format!("demo/{spk}"), u as u64);
        let (w, ali) = tone_utterance(speaker, &transcript, &format!("{spk}-src{u}"), &mut rng);
        segments.extend(extract_segments(&w, &ali, &spk, &silence).map_err(|e| e.to_string())?);
    }
    build_library(&spk, segments, &unit_set(&transcript)).map_err(|e| e.to_string())
}

/// Utterance `index` of the synthesized set for `speaker`.
pub fn synthesize(speaker: usize, seed: u64, index: usize) -> Result<Rendered, String> {
    let lib = demo_library(speaker, 1)?;
    let transcript = words(TRANSCRIPT);
    let plans = plan_synthesis(&lib, &transcript, index + 1, seed).map_err(|e| e.to_string())?;
    let plan = &plans[index];
    let w = render(plan, &lib).map_err(|e| e.to_string())?;
    let mut starts = vec![0u32];
    for (u, &c) in transcript.iter().zip(&plan.choices) {
        starts.push(starts.last().unwrap() + lib.candidates(u)[c].len() as u32);
    }
    Ok(Rendered {
        samples: w.samples().to_vec(),
        starts,
        choices: plan.choices.iter().map(|&c| c as u32).collect(),
        candidates: transcript.iter().map(|u| lib.candidates(u).len() as u32).collect(),
        sample_rate: w.sample_rate(),
    })
}

/// Log-mel fbank after SpecAugment, row-major `frames x dims`.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Spectrogram {
    frames: usize,
    dims: usize,
    values: Vec<f32>,
    masked: Vec<u8>,
}

#[wasm_bindgen]
impl Spectrogram {
    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }
    #[wasm_bindgen(getter)]
    pub fn dims(&self) -> usize {
        self.dims
    }
    pub fn values(&self) -> Vec<f32> {
        self.values.clone()
    }
    /// 1 where a mask covers the cell.
    pub fn masked(&self) -> Vec<u8> {
        self.masked.clone()
    }
}

pub fn spectrogram(
    samples: &[i16],
    sample_rate: u32,
    freq_width: usize,
    time_width: usize,
    masks: usize,
    seed: u64,
) -> Result<Spectrogram, String> {
    let w = Waveform::mono(samples.to_vec(), sample_rate).map_err(|e| e.to_string())?;
    let f = compute_fbank(&w).map_err(|e| e.to_string())?;
    let p = SpecAugmentParams {
        max_freq_mask_width: freq_width,
        num_freq_masks: masks,
        max_time_mask_width: time_width,
        num_time_masks: masks,
        mask_value: MaskValue::UtteranceMean,
    };
    let out = spec_augment(&f, &p, seed);
    let cover = spec_augment_masks(f.frames(), f.dims(), &p, seed);
    let masked =
        (0..f.frames()).flat_map(|t| (0..f.dims()).map(move |d| (t, d))).map(|(t, d)| u8::from(cover.covers(t, d)));
    Ok(Spectrogram {
        frames: f.frames(),
        dims: f.dims(),
        values: out.as_slice().iter().map(|&v| v as f32).collect(),
        masked: masked.collect(),
    })
}

/// Detection metrics of a simulated score distribution.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Detection {
    eer: f64,
    min_dcf: f64,
    far: Vec<f64>,
    frr: Vec<f64>,
    targets: Vec<f64>,
    nontargets: Vec<f64>,
}

#[wasm_bindgen]
impl Detection {
    #[wasm_bindgen(getter)]
    pub fn eer(&self) -> f64 {
        self.eer
    }
    #[wasm_bindgen(getter)]
    pub fn min_dcf(&self) -> f64 {
        self.min_dcf
    }
    pub fn far(&self) -> Vec<f64> {
        self.far.clone()
    }
    pub fn frr(&self) -> Vec<f64> {
        self.frr.clone()
    }
    pub fn targets(&self) -> Vec<f64> {
        self.targets.clone()
    }
    pub fn nontargets(&self) -> Vec<f64> {
        self.nontargets.clone()
    }
}

/// Uniform in (0, 1) from the seed mixer.
fn uniform(seed: u64, key: &str, i: u64) -> f64 {
    ((seed::mix(seed, key, i) >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Box-Muller normal draws.
fn normals(n: usize, mean: f64, seed: u64, key: &str) -> Vec<f64> {
    (0..n as u64)
        .map(|i| {
            let (u1, u2) = (uniform(seed, key, 2 * i), uniform(seed, key, 2 * i + 1));
            mean + (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

/// Unit-variance Gaussian targets at `separation` and nontargets at 0.
pub fn detection(
    targets: usize,
    nontargets: usize,
    separation: f64,
    p_tar: f64,
    seed: u64,
) -> Result<Detection, String> {
    let t = normals(targets, separation, seed, "demo/targets");
    let n = normals(nontargets, 0.0, seed, "demo/nontargets");
    let m = evaluate(&ScoreSet::new(&t, &n), DcfParams { p_tar, ..DcfParams::default() }).map_err(|e| e.to_string())?;
    Ok(Detection {
        eer: m.eer,
        min_dcf: m.min_dcf,
        far: m.roc.iter().map(|p| p.far).collect(),
        frr: m.roc.iter().map(|p| p.frr).collect(),
        targets: t,
        nontargets: n,
    })
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = synthesize)]
pub fn js_synthesize(speaker: u32, seed: u32, index: u32) -> Result<Rendered, JsError> {
    synthesize(speaker as usize, u64::from(seed), index as usize).map_err(js)
}

#[wasm_bindgen(js_name = spectrogram)]
pub fn js_spectrogram(
    samples: &[i16],
    sample_rate: u32,
    freq_width: u32,
    time_width: u32,
    masks: u32,
    seed: u32,
) -> Result<Spectrogram, JsError> {
    spectrogram(samples, sample_rate, freq_width as usize, time_width as usize, masks as usize, u64::from(seed))
        .map_err(js)
}

#[wasm_bindgen(js_name = detection)]
pub fn js_detection(
    targets: u32,
    nontargets: u32,
    separation: f64,
    p_tar: f64,
    seed: u32,
) -> Result<Detection, JsError> {
    detection(targets as usize, nontargets as usize, separation, p_tar, u64::from(seed)).map_err(js)
}
