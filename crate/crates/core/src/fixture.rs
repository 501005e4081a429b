//! Synthetic tone corpora for tests, demos and smoke runs.
//!
//! A "speaker" is a harmonic tone with its own pitch, spectral tilt and
//! vocal-tract warp; a "unit" is a formant-like emphasis of some harmonics. That is enough
//! structure for segmentation, synthesis and a toy speaker classifier.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::alignment::{format_alignment, AlignmentEntry};
use crate::corpus::manifest::{format_manifest, UtteranceRecord};
use crate::corpus::wav::{write_wav_file, Waveform};
use crate::features::archive::write_archive;
use crate::features::FeatureMatrix;
use crate::pipeline::{featurize_utterance, FeatureItem, FeatureRecipe, PipelineError};
use crate::seed;

pub const RATE: u32 = 16_000;
const SILENCE: &str = "sil";

/// Pitch (Hz), tilt and formant warp of speaker `s`.
///
/// Utterance-level mean normalization removes most of the tilt, so the warp
/// is what keeps speakers apart after the feature recipe.
fn voice(s: usize) -> (f64, f64, f64) {
    (105.0 + 37.0 * s as f64, 0.15 + 0.1 * (s % 3) as f64, 0.8 + 0.11 * (s % 5) as f64)
}

/// Centre frequency of the emphasised band of a unit.
fn formant(unit: &str) -> f64 {
    let h = seed::fnv1a64(unit.as_bytes());
    450.0 + (h % 2400) as f64
}

/// `len` samples of speaker `s` producing `unit`.
pub fn tone_unit(s: usize, unit: &str, len: usize, rng: &mut ChaCha8Rng) -> Vec<i16> {
    let (f0, tilt, warp) = voice(s);
    let f0 = f0 * (1.0 + rng.gen_range(-0.02..0.02));
    let fm = formant(unit) * warp;
    let harmonics: Vec<(f64, f64, f64)> = (1..)
        .map(|h| h as f64 * f0)
        .take_while(|&f| f < 4000.0)
        .map(|f| {
            let band = (-((f - fm) / 220.0).powi(2)).exp() + 0.35 * (-((f - 2.2 * fm) / 400.0).powi(2)).exp();
            let amp = (band + 0.05) * (-(tilt * f / 1000.0)).exp();
            (f, amp, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let norm: f64 = harmonics.iter().map(|h| h.1).sum::<f64>().max(1e-9);
    let ramp = (0.01 * f64::from(RATE)) as usize;
    (0..len)
        .map(|n| {
            let t = n as f64 / f64::from(RATE);
            let v: f64 = harmonics.iter().map(|&(f, a, ph)| a * (2.0 * PI * f * t + ph).sin()).sum();
            let edge = n.min(len - 1 - n).min(ramp) as f64 / ramp.max(1) as f64;
            let env = 0.5 - 0.5 * (PI * edge).cos();
            let noise = rng.gen_range(-40.0..40.0);
            (9000.0 * env * v / norm + noise).round().clamp(-32768.0, 32767.0) as i16
        })
        .collect()
}

fn quiet(len: usize, rng: &mut ChaCha8Rng) -> Vec<i16> {
    (0..len).map(|_| rng.gen_range(-30i16..=30)).collect()
}

/// A tone utterance with its alignment, including `sil` entries for pauses.
pub fn tone_utterance(
    s: usize,
    units: &[String],
    utterance_id: &str,
    rng: &mut ChaCha8Rng,
) -> (Waveform, Vec<AlignmentEntry>) {
    let rate = f64::from(RATE);
    let mut samples = Vec::new();
    let mut ali = Vec::new();
    let mut push = |samples: &mut Vec<i16>, unit: &str, chunk: Vec<i16>| {
        if !chunk.is_empty() {
            ali.push(AlignmentEntry::new(utterance_id, unit, samples.len() as f64 / rate, chunk.len() as f64 / rate));
            samples.extend(chunk);
        }
    };
    let lead = rng.gen_range(1600..3200);
    push(&mut samples, SILENCE, quiet(lead, rng));
    for (k, u) in units.iter().enumerate() {
        if k > 0 && rng.gen_bool(0.6) {
            let gap = rng.gen_range(400..1300);
            push(&mut samples, SILENCE, quiet(gap, rng));
        }
        let len = rng.gen_range(2000..4000);
        push(&mut samples, u, tone_unit(s, u, len, rng));
    }
    let tail = rng.gen_range(1600..3200);
    push(&mut samples, SILENCE, quiet(tail, rng));
    (Waveform::mono(samples, RATE).expect("mono"), ali)
}

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub speakers: usize,
    pub train_utterances: usize,
    pub eval_utterances: usize,
    pub transcript: Vec<String>,
    /// Units that may appear in training utterances besides the transcript.
    pub fillers: Vec<String>,
    /// Speaker index that never utters the given unit.
    pub missing_unit: Option<(usize, String)>,
    /// Store evaluation audio as two channels (close and far).
    pub multichannel_eval: bool,
    pub kws_utterances: usize,
    pub train_steps: usize,
    pub seed: u64,
}

impl FixtureSpec {
    pub fn new(speakers: usize, seed: u64) -> Self {
        Self {
            speakers,
            train_utterances: 4,
            eval_utterances: 3,
            transcript: words("ni hao mi ya"),
            fillers: words("wo shi"),
            missing_unit: None,
            multichannel_eval: true,
            kws_utterances: 6,
            train_steps: 20,
            seed,
        }
    }
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

pub fn speaker_id(s: usize) -> String {
    format!("spk{s:02}")
}

/// Paths of a written fixture, relative ones resolved against its root.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub alignment: PathBuf,
    pub eval_manifest: PathBuf,
    pub eval_alignment: PathBuf,
    pub trials: PathBuf,
    pub config: PathBuf,
    /// Per speaker, per transcript unit: number of training segments.
    pub unit_counts: BTreeMap<String, BTreeMap<String, usize>>,
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|source| PipelineError::Io { path: d.into(), source })?;
    }
    fs::write(path, text).map_err(|source| PipelineError::Io { path: path.into(), source })
}

fn write_wav(path: &Path, w: &Waveform) -> Result<(), PipelineError> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|source| PipelineError::Io { path: d.into(), source })?;
    }
    write_wav_file(path, w).map_err(|source| PipelineError::Wav { context: path.display().to_string(), source })
}

fn train_transcript(spec: &FixtureSpec, s: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let excluded = spec.missing_unit.as_ref().filter(|(m, _)| *m == s).map(|(_, u)| u.as_str());
    let pick = |rng: &mut ChaCha8Rng| -> String {
        loop {
            let pool = if rng.gen_bool(0.75) || spec.fillers.is_empty() { &spec.transcript } else { &spec.fillers };
            let u = &pool[rng.gen_range(0..pool.len())];
            if Some(u.as_str()) != excluded {
                return u.clone();
            }
        }
    };
    if excluded.is_none() && rng.gen_bool(0.5) {
        return spec.transcript.clone();
    }
    let n = rng.gen_range(2..=spec.transcript.len().max(2));
    (0..n).map(|_| pick(rng)).collect()
}

/// Two-channel copy: the second channel is attenuated with a short echo.
fn far_field(w: &Waveform) -> Waveform {
    let x = w.samples();
    let delay = 120;
    let far: Vec<i16> = (0..x.len())
        .map(|n| {
            let echo = if n >= delay { 0.3 * f64::from(x[n - delay]) } else { 0.0 };
            (0.5 * f64::from(x[n]) + echo).round() as i16
        })
        .collect();
    Waveform::new(vec![x.to_vec(), far], w.sample_rate()).expect("equal lengths")
}

/// Row-stochastic posteriors: the scripted label gets most of the mass.
fn posterior_stream(script: &[usize], labels: usize, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let mut data = Vec::with_capacity(script.len() * labels);
    for &l in script {
        let peak = rng.gen_range(0.55..0.95);
        let mut rest: Vec<f64> = (0..labels).map(|_| rng.gen_range(0.01..1.0)).collect();
        rest[l] = 0.0;
        let total: f64 = rest.iter().sum();
        for (k, r) in rest.iter().enumerate() {
            data.push(if k == l { peak } else { (1.0 - peak) * r / total });
        }
    }
    FeatureMatrix::new(script.len(), labels, data).expect("shape")
}

fn kws_script(units: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut script = vec![0; rng.gen_range(10..30)];
    for &u in units {
        script.extend(std::iter::repeat_n(u, rng.gen_range(15..30)));
    }
    script.extend(std::iter::repeat_n(0, rng.gen_range(10..30)));
    script
}

/// Write a complete fixture under `dir`: training and evaluation corpora,
/// a trial list, noise and RIR files, keyword posteriors and `config.txt`.
pub fn write_fixture(dir: &Path, spec: &FixtureSpec) -> Result<Fixture, PipelineError> {
    let mut train_records = Vec::new();
    let mut train_ali = Vec::new();
    let mut unit_counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for s in 0..spec.speakers {
        let spk = speaker_id(s);
        let counts = unit_counts.entry(spk.clone()).or_default();
        for u in &spec.transcript {
            counts.insert(u.clone(), 0);
        }
        for i in 0..spec.train_utterances {
            let mut rng = seed::stream(spec.seed, &format!("fixture/train/{s}"), i as u64);
            let units = train_transcript(spec, s, &mut rng);
            let id = format!("{spk}-train{i:03}");
            let (w, ali) = tone_utterance(s, &units, &id, &mut rng);
            for u in &units {
                if let Some(c) = counts.get_mut(u) {
                    *c += 1;
                }
            }
            let rel = format!("train/wav/{id}.wav");
            write_wav(&dir.join(&rel), &w)?;
            train_records.push(UtteranceRecord {
                utterance_id: id,
                speaker_id: spk.clone(),
                transcript: units,
                audio_path: rel.trim_start_matches("train/").to_string(),
                channel_index: None,
            });
            train_ali.extend(ali);
        }
    }
    let manifest = dir.join("train/manifest.tsv");
    let alignment = dir.join("train/alignment.ctm");
    write(&manifest, &format_manifest(&train_records))?;
    write(&alignment, &format_alignment(&train_ali))?;

    let mut eval_records = Vec::new();
    let mut eval_ali = Vec::new();
    for s in 0..spec.speakers {
        let spk = speaker_id(s);
        for i in 0..spec.eval_utterances {
            let mut rng = seed::stream(spec.seed, &format!("fixture/eval/{s}"), i as u64);
            let id = format!("{spk}-eval{i:03}");
            let (w, ali) = tone_utterance(s, &spec.transcript, &id, &mut rng);
            let w = if spec.multichannel_eval { far_field(&w) } else { w };
            let rel = format!("wav/{id}.wav");
            write_wav(&dir.join("eval").join(&rel), &w)?;
            eval_records.push(UtteranceRecord {
                utterance_id: id,
                speaker_id: spk.clone(),
                transcript: spec.transcript.clone(),
                audio_path: rel,
                channel_index: None,
            });
            eval_ali.extend(ali);
        }
    }
    let eval_manifest = dir.join("eval/manifest.tsv");
    let eval_alignment = dir.join("eval/alignment.ctm");
    write(&eval_manifest, &format_manifest(&eval_records))?;
    write(&eval_alignment, &format_alignment(&eval_ali))?;

    let mut trials = String::new();
    for enroll in eval_records.iter().filter(|r| r.utterance_id.ends_with("eval000")) {
        for test in eval_records.iter().filter(|r| !r.utterance_id.ends_with("eval000")) {
            let label = if enroll.speaker_id == test.speaker_id { "target" } else { "nontarget" };
            let _ = writeln!(trials, "{} {} {label}", enroll.utterance_id, test.utterance_id);
        }
    }
    let trials_path = dir.join("eval/trials.txt");
    write(&trials_path, &trials)?;

    // Additive noise and room responses.
    for k in 0..2 {
        let mut rng = seed::stream(spec.seed, "fixture/noise", k);
        let mut level = 0.0f64;
        let noise: Vec<i16> = (0..RATE as usize)
            .map(|_| {
                let white: f64 = rng.gen_range(-3000.0..3000.0);
                level = if k == 0 { white } else { 0.97 * level + 0.2 * white };
                level.round() as i16
            })
            .collect();
        write_wav(&dir.join(format!("noise/noise{k}.wav")), &Waveform::mono(noise, RATE).unwrap())?;
        let taps = 400 + 400 * k as usize;
        let rir: Vec<i16> = (0..taps)
            .map(|n| {
                if n == 0 {
                    return 20000;
                }
                let decay = (-(n as f64) / (taps as f64 / 5.0)).exp();
                (rng.gen_range(-8000.0..8000.0) * decay).round() as i16
            })
            .collect();
        write_wav(&dir.join(format!("rir/rir{k}.wav")), &Waveform::mono(rir, RATE).unwrap())?;
    }

    // Keyword posteriors over sil, keyword units and a filler class.
    let mut labels = vec![SILENCE.to_string()];
    labels.extend(spec.transcript.iter().cloned());
    labels.push("filler".into());
    let keyword: Vec<usize> = (1..=spec.transcript.len()).collect();
    let filler = labels.len() - 1;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..spec.kws_utterances {
        let mut rng = seed::stream(spec.seed, "fixture/kws", i as u64);
        pos.push((format!("kws-pos{i:03}"), posterior_stream(&kws_script(&keyword, &mut rng), labels.len(), &mut rng)));
        let dropped = rng.gen_range(0..keyword.len());
        let other: Vec<usize> =
            keyword.iter().enumerate().map(|(k, &u)| if k == dropped { filler } else { u }).collect();
        neg.push((format!("kws-neg{i:03}"), posterior_stream(&kws_script(&other, &mut rng), labels.len(), &mut rng)));
    }
    let kws_dir = dir.join("kws");
    let arch = |name: &str, recs: &[(String, FeatureMatrix)]| {
        write_archive(&kws_dir, name, recs).map_err(|source| PipelineError::Feature { context: name.into(), source })
    };
    arch("pos", &pos)?;
    arch("neg", &neg)?;
    write(&kws_dir.join("labels.txt"), &(labels.join("\n") + "\n"))?;

    let config = dir.join("config.txt");
    write(&config, &fixture_config(spec))?;

    Ok(Fixture {
        root: dir.into(),
        manifest,
        alignment,
        eval_manifest,
        eval_alignment,
        trials: trials_path,
        config,
        unit_counts,
    })
}

fn fixture_config(spec: &FixtureSpec) -> String {
    format!(
        "# Tone-speaker fixture\n\
         [run]\nseed = {seed}\nworkers = 0\n\n\
         [paths]\nwork_dir = work\nmanifest = train/manifest.tsv\nalignment = train/alignment.ctm\n\
         eval_manifest = eval/manifest.tsv\neval_alignment = eval/alignment.ctm\ntrials = eval/trials.txt\n\
         noise_dir = noise\nrir_dir = rir\nkws_pos = kws/pos.bin\nkws_neg = kws/neg.bin\nkws_labels = kws/labels.txt\n\n\
         [synthesis]\ntranscript = {transcript}\nsnr_list = 0,5,10,15\nnoise_copies = 1\nreverb_copies = 1\n\n\
         [features]\ncmn_window = 300\nspecaug = true\n\n\
         [network]\nsteps = {steps}\nlr = 0.02\nbatch = 4\ntrain_frames = 40\n\n\
         [metrics]\np_tar = 0.01\n\n\
         [kws]\nw_smooth = 30\nw_max = 100\n",
        seed = spec.seed,
        transcript = spec.transcript.join(" "),
        steps = spec.train_steps,
    )
}

/// In-memory featurized tone utterances: `per_speaker` each for `speakers`
/// speakers, VAD-filtered and CMN-normalized, without SpecAugment.
pub fn toy_feature_set(speakers: usize, per_speaker: usize, key: &str, seed: u64) -> Vec<FeatureItem> {
    let transcript = words("ni hao mi ya");
    let recipe = FeatureRecipe::default();
    let mut out = Vec::new();
    for s in 0..speakers {
        for i in 0..per_speaker {
            let mut rng = seed::stream(seed, &format!("toy/{key}/{s}"), i as u64);
            let id = format!("{}-{key}{i:03}", speaker_id(s));
            let (w, ali) = tone_utterance(s, &transcript, &id, &mut rng);
            let features = featurize_utterance(&id, &w, Some(&ali), &recipe, seed).expect("tone features");
            out.push(FeatureItem { id, speaker_id: speaker_id(s), features });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utterance_alignment_tiles_the_waveform() {
        let mut rng = seed::stream(1, "t", 0);
        let (w, ali) = tone_utterance(0, &words("ni hao"), "u", &mut rng);
        let total: f64 = ali.iter().map(|e| e.duration).sum();
        assert!((total - w.duration_secs()).abs() < 1e-9);
        let units: Vec<&str> = ali.iter().map(|e| e.unit.as_str()).filter(|u| *u != SILENCE).collect();
        assert_eq!(units, ["ni", "hao"]);
    }

    #[test]
    fn speakers_differ_in_pitch() {
        let mut rng = seed::stream(1, "t", 0);
        let a = tone_unit(0, "ni", 1600, &mut rng);
        let b = tone_unit(1, "ni", 1600, &mut rng);
        assert_ne!(a, b);
        assert!(a.iter().any(|&v| v.unsigned_abs() > 1000));
    }
}
