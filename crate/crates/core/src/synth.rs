//! Fixed-transcript synthesis by random unit selection and raw concatenation.
//!
//! For each unit position, a segment is drawn uniformly (with replacement)
//! from the speaker's own candidates, and the chosen samples are copied back
//! to back. There is no join smoothing of any kind.

use std::fs;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::corpus::alignment::{format_alignment, AlignmentEntry};
use crate::corpus::manifest::{format_manifest, UtteranceRecord};
use crate::corpus::wav::{write_wav_file, WavError, Waveform};
use crate::seed;
use crate::segment::{library_stats, unit_set, UnitLibrary};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("speaker {speaker} has no candidates for unit {unit:?}")]
    Coverage { speaker: String, unit: String },
    #[error(
        "plan for {speaker} position {position}: index {index} out of range for unit {unit:?} ({count} candidates)"
    )]
    BadPlan { speaker: String, position: usize, unit: String, index: usize, count: usize },
    #[error("plan speaker {plan} does not match library speaker {library}")]
    SpeakerMismatch { plan: String, library: String },
    #[error("sample rate mismatch among chosen segments: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("empty transcript")]
    EmptyTranscript,
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which candidate was picked at each transcript position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesisPlan {
    pub speaker_id: String,
    pub utterance_index: usize,
    pub transcript: Vec<String>,
    pub choices: Vec<usize>,
    /// The derived seed this plan was drawn with.
    pub seed_record: u64,
}

fn seed_key(speaker_id: &str) -> String {
    format!("synth/{speaker_id}")
}

/// Draw `count` plans. Plan `i` uses the stream `mix(seed, "synth/<speaker>", i)`.
pub fn plan_synthesis(
    lib: &UnitLibrary,
    transcript: &[String],
    count: usize,
    seed: u64,
) -> Result<Vec<SynthesisPlan>, SynthError> {
    if transcript.is_empty() {
        return Err(SynthError::EmptyTranscript);
    }
    let sizes: Vec<usize> = transcript.iter().map(|u| lib.candidates(u).len()).collect();
    if let Some(pos) = sizes.iter().position(|&n| n == 0) {
        return Err(SynthError::Coverage { speaker: lib.speaker_id.clone(), unit: transcript[pos].clone() });
    }
    let key = seed_key(&lib.speaker_id);
    Ok((0..count)
        .map(|i| {
            let seed_record = seed::mix(seed, &key, i as u64);
            let mut rng = seed::stream(seed, &key, i as u64);
            let choices = sizes.iter().map(|&n| rng.gen_range(0..n as u64) as usize).collect();
            SynthesisPlan {
                speaker_id: lib.speaker_id.clone(),
                utterance_index: i,
                transcript: transcript.to_vec(),
                choices,
                seed_record,
            }
        })
        .collect())
}

fn check_plan(plan: &SynthesisPlan, lib: &UnitLibrary) -> Result<(), SynthError> {
    if plan.speaker_id != lib.speaker_id {
        return Err(SynthError::SpeakerMismatch { plan: plan.speaker_id.clone(), library: lib.speaker_id.clone() });
    }
    for (position, (unit, &index)) in plan.transcript.iter().zip(&plan.choices).enumerate() {
        let count = lib.candidates(unit).len();
        if index >= count {
            return Err(SynthError::BadPlan {
                speaker: plan.speaker_id.clone(),
                position,
                unit: unit.clone(),
                index,
                count,
            });
        }
    }
    Ok(())
}

/// Concatenate the chosen segments in transcript order, inserting
/// `padding` zero samples between units (0 for plain concatenation).
pub fn render_padded(plan: &SynthesisPlan, lib: &UnitLibrary, padding: usize) -> Result<Waveform, SynthError> {
    check_plan(plan, lib)?;
    let chosen: Vec<_> = plan.transcript.iter().zip(&plan.choices).map(|(u, &i)| &lib.candidates(u)[i]).collect();
    let rate = chosen.first().map(|s| s.sample_rate).ok_or(SynthError::EmptyTranscript)?;
    if let Some(s) = chosen.iter().find(|s| s.sample_rate != rate) {
        return Err(SynthError::RateMismatch(rate, s.sample_rate));
    }
    let total = chosen.iter().map(|s| s.len()).sum::<usize>() + padding * (chosen.len() - 1);
    let mut samples = Vec::with_capacity(total);
    for (k, s) in chosen.iter().enumerate() {
        if k > 0 {
            samples.resize(samples.len() + padding, 0);
        }
        samples.extend_from_slice(&s.samples);
    }
    Ok(Waveform::mono(samples, rate)?)
}

pub fn render(plan: &SynthesisPlan, lib: &UnitLibrary) -> Result<Waveform, SynthError> {
    render_padded(plan, lib, 0)
}

/// Unit boundaries of a rendered plan, as alignment entries.
pub fn plan_alignment(
    plan: &SynthesisPlan,
    lib: &UnitLibrary,
    utterance_id: &str,
    padding: usize,
) -> Vec<AlignmentEntry> {
    let rate = lib.sample_rate().unwrap_or(1) as f64;
    let mut at = 0usize;
    let mut out = Vec::with_capacity(plan.transcript.len());
    for (k, (u, &i)) in plan.transcript.iter().zip(&plan.choices).enumerate() {
        if k > 0 {
            at += padding;
        }
        let n = lib.candidates(u)[i].len();
        out.push(AlignmentEntry::new(utterance_id, u, at as f64 / rate, n as f64 / rate));
        at += n;
    }
    out
}

#[derive(Debug, Clone)]
pub struct SynthesizedUtterance {
    pub record: UtteranceRecord,
    pub plan: SynthesisPlan,
    pub waveform: Waveform,
    pub alignment: Vec<AlignmentEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedSpeaker {
    pub speaker_id: String,
    pub missing_units: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct SynthesizedCorpus {
    pub utterances: Vec<SynthesizedUtterance>,
    pub skipped: Vec<SkippedSpeaker>,
    /// (speaker, N_i) for each covered speaker, in library order.
    pub per_speaker: Vec<(String, usize)>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SynthOptions {
    /// Zero samples inserted between units; 0 means raw concatenation.
    pub padding: usize,
    /// Worker threads; 0 lets the pool decide. Never changes the output.
    pub workers: usize,
}

pub fn utterance_id(speaker_id: &str, index: usize) -> String {
    format!("{speaker_id}-syn{index:05}")
}

/// Render N_i utterances for every covered speaker, skipping the rest.
pub fn synthesize_corpus(
    libraries: &[UnitLibrary],
    transcript: &[String],
    seed: u64,
    opts: SynthOptions,
) -> Result<SynthesizedCorpus, SynthError> {
    let targets = unit_set(transcript);
    let mut corpus = SynthesizedCorpus::default();
    let mut jobs: Vec<(usize, SynthesisPlan)> = Vec::new();
    for (li, lib) in libraries.iter().enumerate() {
        let st = library_stats(lib, &targets);
        if !st.covered {
            corpus.skipped.push(SkippedSpeaker {
                speaker_id: lib.speaker_id.clone(),
                missing_units: st.missing_units().into_iter().map(str::to_string).collect(),
            });
            continue;
        }
        corpus.per_speaker.push((lib.speaker_id.clone(), st.n_utterances));
        for plan in plan_synthesis(lib, transcript, st.n_utterances, seed)? {
            jobs.push((li, plan));
        }
    }

    let render_one = |(li, plan): &(usize, SynthesisPlan)| -> Result<SynthesizedUtterance, SynthError> {
        let lib = &libraries[*li];
        let id = utterance_id(&lib.speaker_id, plan.utterance_index);
        let waveform = render_padded(plan, lib, opts.padding)?;
        Ok(SynthesizedUtterance {
            record: UtteranceRecord {
                utterance_id: id.clone(),
                speaker_id: lib.speaker_id.clone(),
                transcript: plan.transcript.clone(),
                audio_path: format!("wav/{id}.wav"),
                channel_index: None,
            },
            alignment: plan_alignment(plan, lib, &id, opts.padding),
            plan: plan.clone(),
            waveform,
        })
    };
    corpus.utterances =
        crate::pipeline::par_map(&jobs, opts.workers, render_one).into_iter().collect::<Result<_, _>>()?;
    Ok(corpus)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.display().to_string(), source }
}

pub const MANIFEST: &str = "manifest.tsv";
pub const ALIGNMENT: &str = "alignment.ctm";
pub const PLANS: &str = "plans.tsv";
pub const SKIPPED: &str = "skipped.tsv";

/// Write `wav/`, `manifest.tsv`, `alignment.ctm`, `plans.tsv` and `skipped.tsv`.
pub fn write_corpus(dir: &Path, corpus: &SynthesizedCorpus, libraries: &[UnitLibrary]) -> Result<(), SynthError> {
    let wav_dir = dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(io_err(&wav_dir))?;
    let mut plans = String::from("utterance\tspeaker\tseed\tunit\tchoice\tsource\tstart_sample\tend_sample\n");
    let mut alignment = Vec::new();
    let mut records = Vec::new();
    for u in &corpus.utterances {
        write_wav_file(&dir.join(&u.record.audio_path), &u.waveform)?;
        records.push(u.record.clone());
        alignment.extend(u.alignment.iter().cloned());
        let lib = libraries.iter().find(|l| l.speaker_id == u.plan.speaker_id);
        for (unit, &choice) in u.plan.transcript.iter().zip(&u.plan.choices) {
            let (src, a, b) = lib
                .map(|l| &l.candidates(unit)[choice])
                .map(|s| (s.source_utterance.as_str(), s.start_sample, s.end_sample))
                .unwrap_or(("?", 0, 0));
            plans.push_str(&format!(
                "{}\t{}\t{:016x}\t{}\t{}\t{}\t{}\t{}\n",
                u.record.utterance_id, u.plan.speaker_id, u.plan.seed_record, unit, choice, src, a, b
            ));
        }
    }
    let mut skipped = String::from("speaker\tmissing_units\n");
    for s in &corpus.skipped {
        skipped.push_str(&format!("{}\t{}\n", s.speaker_id, s.missing_units.join(" ")));
    }
    for (name, body) in [
        (MANIFEST, format_manifest(&records)),
        (ALIGNMENT, format_alignment(&alignment)),
        (PLANS, plans),
        (SKIPPED, skipped),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{build_library, UnitSegment};

    fn units(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn seg(speaker: &str, unit: &str, k: usize, len: usize) -> UnitSegment {
        UnitSegment {
            speaker_id: speaker.into(),
            unit: unit.into(),
            source_utterance: format!("{speaker}_u{k}"),
            start_sample: 0,
            end_sample: len,
            samples: (0..len).map(|i| (i as i16).wrapping_mul(7).wrapping_add(k as i16 * 100)).collect(),
            sample_rate: 16000,
        }
    }

    fn library(speaker: &str, counts: &[(&str, usize)], len: usize) -> UnitLibrary {
        let segs: Vec<_> = counts.iter().flat_map(|(u, n)| (0..*n).map(move |k| seg(speaker, u, k, len))).collect();
        let target: Vec<String> = counts.iter().map(|(u, _)| u.to_string()).collect();
        build_library(speaker, segs, &target).unwrap()
    }

    #[test]
    fn plans_follow_max_count_and_single_candidates() {
        let lib = library("s", &[("ni", 3), ("hao", 2), ("mi", 5), ("ya", 1)], 10);
        let t = units(&["ni", "hao", "mi", "ya"]);
        let plans = plan_synthesis(&lib, &t, 5, 42).unwrap();
        assert_eq!(plans.len(), 5);
        for p in &plans {
            assert_eq!(p.choices.len(), 4);
            assert_eq!(p.choices[3], 0);
            assert!(p.choices[0] < 3 && p.choices[1] < 2 && p.choices[2] < 5);
        }
        assert_eq!(plans, plan_synthesis(&lib, &t, 5, 42).unwrap());
        assert_ne!(plans, plan_synthesis(&lib, &t, 5, 43).unwrap());
    }

    #[test]
    fn missing_unit_names_the_unit() {
        let lib = library("s", &[("ni", 3), ("hao", 2)], 10);
        let err = plan_synthesis(&lib, &units(&["ni", "hao", "mi"]), 1, 0).unwrap_err();
        assert!(matches!(err, SynthError::Coverage { ref unit, .. } if unit == "mi"));
    }

    #[test]
    fn render_is_plain_concatenation() {
        let mut lib = UnitLibrary::empty("s");
        lib.table.insert("ni".into(), vec![seg("s", "ni", 0, 3200)]);
        lib.table.insert("hao".into(), vec![seg("s", "hao", 1, 2880)]);
        let plan = SynthesisPlan {
            speaker_id: "s".into(),
            utterance_index: 0,
            transcript: units(&["ni", "hao"]),
            choices: vec![0, 0],
            seed_record: 0,
        };
        let w = render(&plan, &lib).unwrap();
        assert_eq!(w.len(), 6080);
        let mut expect = lib.candidates("ni")[0].samples.clone();
        expect.extend_from_slice(&lib.candidates("hao")[0].samples);
        assert_eq!(w.samples(), &expect[..]);

        let single = SynthesisPlan { transcript: units(&["hao"]), choices: vec![0], ..plan.clone() };
        assert_eq!(render(&single, &lib).unwrap().samples(), &lib.candidates("hao")[0].samples[..]);

        let padded = render_padded(&plan, &lib, 160).unwrap();
        assert_eq!(padded.len(), 6080 + 160);
        assert!(padded.samples()[3200..3360].iter().all(|&s| s == 0));
    }

    #[test]
    fn four_units_of_point_two_seconds() {
        let lib = library("s", &[("ni", 2), ("hao", 2), ("mi", 2), ("ya", 2)], 3200);
        let plans = plan_synthesis(&lib, &units(&["ni", "hao", "mi", "ya"]), 3, 1).unwrap();
        for p in &plans {
            assert_eq!(render(p, &lib).unwrap().len(), 12800);
        }
    }

    #[test]
    fn render_rejects_bad_plans() {
        let mut odd = seg("s", "hao", 0, 10);
        odd.sample_rate = 8000;
        let mut lib = library("s", &[("ni", 1)], 10);
        lib.table.insert("hao".into(), vec![odd]);
        let plan = SynthesisPlan {
            speaker_id: "s".into(),
            utterance_index: 0,
            transcript: units(&["ni", "hao"]),
            choices: vec![0, 0],
            seed_record: 0,
        };
        assert!(matches!(render(&plan, &lib), Err(SynthError::RateMismatch(16000, 8000))));
        let bad = SynthesisPlan { choices: vec![1, 0], ..plan };
        assert!(matches!(render(&bad, &lib), Err(SynthError::BadPlan { index: 1, .. })));
    }

    #[test]
    fn corpus_counts_and_skips() {
        let t = units(&["ni", "hao", "mi", "ya"]);
        let a = library("a", &[("ni", 5), ("hao", 1), ("mi", 1), ("ya", 2)], 10);
        let b = library("b", &[("ni", 1), ("hao", 3), ("mi", 1), ("ya", 1)], 10);
        let c = library("c", &[("ni", 4), ("hao", 1), ("mi", 1)], 10);
        let corpus = synthesize_corpus(&[a, b, c], &t, 3, SynthOptions::default()).unwrap();
        assert_eq!(corpus.utterances.len(), 8);
        assert_eq!(corpus.per_speaker, vec![("a".to_string(), 5), ("b".to_string(), 3)]);
        assert_eq!(corpus.skipped, vec![SkippedSpeaker { speaker_id: "c".into(), missing_units: vec!["ya".into()] }]);
        for u in &corpus.utterances {
            assert_eq!(u.waveform.len(), 40);
            assert_eq!(u.alignment.len(), 4);
        }
        let empty = synthesize_corpus(&[UnitLibrary::empty("z")], &t, 3, SynthOptions::default()).unwrap();
        assert!(empty.utterances.is_empty());
        assert_eq!(empty.skipped.len(), 1);
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let t = units(&["ni", "hao", "mi", "ya"]);
        let libs: Vec<_> =
            (0..4).map(|k| library(&format!("s{k}"), &[("ni", 3 + k), ("hao", 2), ("mi", 4), ("ya", 2)], 50)).collect();
        let one = synthesize_corpus(&libs, &t, 11, SynthOptions { workers: 1, padding: 0 }).unwrap();
        let many = synthesize_corpus(&libs, &t, 11, SynthOptions { workers: 4, padding: 0 }).unwrap();
        assert_eq!(one.utterances.len(), many.utterances.len());
        for (x, y) in one.utterances.iter().zip(&many.utterances) {
            assert_eq!(x.plan, y.plan);
            assert_eq!(x.waveform, y.waveform);
        }
    }
}
