mod common;

use unitcat::segment::{build_library, library_stats, UnitSegment};
use unitcat::synth::{plan_synthesis, render, synthesize_corpus, SynthOptions};
use unitcat::UnitLibrary;

fn units(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn seg(spk: &str, unit: &str, k: usize, len: usize) -> UnitSegment {
    UnitSegment {
        speaker_id: spk.into(),
        unit: unit.into(),
        source_utterance: format!("{spk}-u{k}"),
        start_sample: 0,
        end_sample: len,
        samples: (0..len).map(|i| (k * 100 + i) as i16).collect(),
        sample_rate: 16_000,
    }
}

fn library(spk: &str, counts: &[(&str, usize)]) -> UnitLibrary {
    let mut segs = Vec::new();
    let mut k = 0;
    for &(u, n) in counts {
        for _ in 0..n {
            segs.push(seg(spk, u, k, 3 + k % 4));
            k += 1;
        }
    }
    let target = units("ni hao mi ya");
    build_library(spk, segs, &target).unwrap()
}

#[test]
fn candidate_choice_is_uniform() {
    let lib = library("s", &[("ni", 5), ("hao", 5), ("mi", 5), ("ya", 5)]);
    let plans = plan_synthesis(&lib, &units("ni hao mi ya"), 2500, 11).unwrap();
    let mut counts = [[0usize; 5]; 4];
    for p in &plans {
        for (pos, &c) in p.choices.iter().enumerate() {
            counts[pos][c] += 1;
        }
    }
    // 10^4 draws in total; test each position and the pooled table.
    let expected = 2500.0 / 5.0;
    let mut pooled = 0.0;
    for row in &counts {
        let stat: f64 = row.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        pooled += stat;
        assert!(common::chi_square_p(stat, 4) > 0.001, "position counts {row:?}, chi2 {stat}");
    }
    assert!(common::chi_square_p(pooled, 16) > 0.001, "pooled chi2 {pooled}");
}

#[test]
fn n_i_rule_and_exclusion() {
    let full = library("a", &[("ni", 3), ("hao", 2), ("mi", 5), ("ya", 1)]);
    let partial = library("b", &[("ni", 4), ("hao", 4), ("mi", 4)]);
    let target = units("ni hao mi ya");
    assert_eq!(library_stats(&full, &target).n_utterances, 5);
    let corpus = synthesize_corpus(&[full, partial], &target, 3, SynthOptions::default()).unwrap();
    assert_eq!(corpus.utterances.len(), 5);
    assert!(corpus.utterances.iter().all(|u| u.record.speaker_id == "a"));
    assert_eq!(corpus.per_speaker, vec![("a".to_string(), 5)]);
    assert_eq!(corpus.skipped.len(), 1);
    assert_eq!(corpus.skipped[0].speaker_id, "b");
    assert_eq!(corpus.skipped[0].missing_units, vec!["ya".to_string()]);
}

#[test]
fn rendering_is_concatenation_of_choices() {
    let lib = library("a", &[("ni", 3), ("hao", 2), ("mi", 5), ("ya", 1)]);
    for plan in plan_synthesis(&lib, &units("ni hao mi ya"), 20, 5).unwrap() {
        let w = render(&plan, &lib).unwrap();
        let mut expect = Vec::new();
        for (u, &c) in plan.transcript.iter().zip(&plan.choices) {
            expect.extend_from_slice(&lib.table[u][c].samples);
        }
        assert_eq!(w.samples(), &expect[..]);
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let libs = vec![
        library("a", &[("ni", 3), ("hao", 2), ("mi", 5), ("ya", 1)]),
        library("c", &[("ni", 2), ("hao", 7), ("mi", 1), ("ya", 1)]),
    ];
    let target = units("ni hao mi ya");
    let one = synthesize_corpus(&libs, &target, 9, SynthOptions { padding: 0, workers: 1 }).unwrap();
    let four = synthesize_corpus(&libs, &target, 9, SynthOptions { padding: 0, workers: 4 }).unwrap();
    assert_eq!(one.utterances.len(), 12);
    for (a, b) in one.utterances.iter().zip(&four.utterances) {
        assert_eq!(a.plan, b.plan);
        assert_eq!(a.waveform, b.waveform);
    }
}
