mod common;

use proptest::prelude::*;
use rand::Rng;
use unitcat::scoring::{compute_eer, compute_min_dcf, evaluate, sweep_rates, DcfParams, ScoreSet};
use unitcat::seed;

/// Random scores, sometimes quantized so that ties across classes occur.
fn random_set(i: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seed::stream(2024, "metrics-oracle", i);
    let nt = rng.gen_range(1..100);
    let nn = rng.gen_range(1..=200 - nt);
    let quant = [0.0, 0.1, 0.25][rng.gen_range(0..3)];
    let shift = rng.gen_range(-1.0..2.0);
    let mut draw = |mu: f64| {
        let v: f64 = mu + rng.gen_range(-1.0..1.0) + rng.gen_range(-1.0..1.0);
        if quant > 0.0 {
            (v / quant).round() * quant
        } else {
            v
        }
    };
    let tar = (0..nt).map(|_| draw(shift)).collect();
    let non = (0..nn).map(|_| draw(0.0)).collect();
    (tar, non)
}

#[test]
fn eer_and_min_dcf_match_exhaustive_oracles() {
    let p = DcfParams::default();
    for i in 0..1000 {
        let (tar, non) = random_set(i);
        let s = ScoreSet::new(&tar, &non);
        let (eer, _) = compute_eer(&s).unwrap();
        let oracle = common::brute_eer(&tar, &non);
        assert!((eer - oracle).abs() < 1e-9, "set {i}: eer {eer} vs oracle {oracle}");
        let (dcf, _) = compute_min_dcf(&s, p).unwrap();
        assert_eq!(dcf, common::brute_min_dcf(&tar, &non, p.p_tar, p.c_miss, p.c_fa), "set {i}");
    }
}

#[test]
fn worked_example() {
    let s = ScoreSet::new(&[0.9, 0.7, 0.6, 0.2], &[0.8, 0.3, 0.1, 0.05]);
    let m = evaluate(&s, DcfParams::default()).unwrap();
    assert!((m.eer - 0.25).abs() < 1e-12);
    assert!((m.min_dcf - 0.75).abs() < 1e-12);
    assert!(m.dcf_threshold > 0.8);
    assert_eq!(common::rates(&[0.9, 0.7, 0.6, 0.2], &[0.8, 0.3, 0.1, 0.05], 0.55), (0.25, 0.25));
}

#[test]
fn all_equal_scores_cost_one() {
    let s = ScoreSet::new(&[0.5, 0.5], &[0.5, 0.5, 0.5]);
    assert_eq!(compute_min_dcf(&s, DcfParams::default()).unwrap().0, 1.0);
}

proptest! {
    #[test]
    fn sweep_is_monotone(i in 0u64..10_000) {
        let (tar, non) = random_set(i);
        let roc = sweep_rates(&ScoreSet::new(&tar, &non)).unwrap();
        prop_assert_eq!((roc[0].far, roc[0].frr), (1.0, 0.0));
        prop_assert_eq!((roc[roc.len() - 1].far, roc[roc.len() - 1].frr), (0.0, 1.0));
        for w in roc.windows(2) {
            prop_assert!(w[0].threshold < w[1].threshold);
            prop_assert!(w[1].far <= w[0].far && w[1].frr >= w[0].frr);
        }
    }

    #[test]
    fn affine_invariance_and_label_swap(i in 0u64..10_000, a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let (tar, non) = random_set(i);
        let p = DcfParams::default();
        let base = evaluate(&ScoreSet::new(&tar, &non), p).unwrap();
        let map = |v: &[f64]| v.iter().map(|x| a * x + b).collect::<Vec<_>>();
        let moved = evaluate(&ScoreSet::new(&map(&tar), &map(&non)), p).unwrap();
        prop_assert!((base.eer - moved.eer).abs() < 1e-9);
        let pairs = |m: &unitcat::scoring::DetMetrics| m.roc.iter().map(|r| (r.far, r.frr)).collect::<Vec<_>>();
        // Affine maps can merge near-equal scores in floating point; compare
        // only when the distinct-score structure survived.
        if base.roc.len() == moved.roc.len() {
            prop_assert_eq!(pairs(&base), pairs(&moved));
            prop_assert_eq!(base.min_dcf, moved.min_dcf);
        }
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        let swapped = compute_eer(&ScoreSet::new(&neg(&non), &neg(&tar))).unwrap().0;
        prop_assert!((base.eer - swapped).abs() < 1e-9);
    }

    #[test]
    fn eer_is_bracketed_by_crossing_points(i in 0u64..10_000) {
        let (tar, non) = random_set(i);
        let m = evaluate(&ScoreSet::new(&tar, &non), DcfParams::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.eer));
        let k = m.roc.iter().position(|r| r.far <= r.frr).unwrap();
        let hi = m.roc[k];
        prop_assert!(m.eer <= hi.far.max(hi.frr) + 1e-12);
        if k > 0 {
            let lo = m.roc[k - 1];
            prop_assert!(m.eer <= lo.far.max(lo.frr) + 1e-12);
        }
    }
}
