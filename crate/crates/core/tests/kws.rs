mod common;

use proptest::prelude::*;
use rand::Rng;
use unitcat::kws::{
    confidence, kws_roc, smooth_posteriors, utterance_confidence, CombineRule, KeywordSpec, PosteriorStream,
};
use unitcat::{seed, FeatureMatrix};

fn rows(frames: usize, dims: usize, s: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::stream(s, "kws-it", 0);
    (0..frames)
        .map(|_| {
            let raw: Vec<f64> = (0..dims).map(|_| rng.gen_range(0.0..1.0f64).powi(3)).collect();
            let total: f64 = raw.iter().sum::<f64>().max(1e-12);
            raw.into_iter().map(|v| v / total).collect()
        })
        .collect()
}

/// Built directly so perturbed, non-stochastic rows are allowed.
fn stream(r: &[Vec<f64>]) -> PosteriorStream {
    let dims = r[0].len();
    PosteriorStream {
        probs: FeatureMatrix::from_rows(dims, r).unwrap(),
        labels: (0..dims).map(|i| format!("l{i}")).collect(),
    }
}

fn spec(units: Vec<usize>, w_smooth: usize, w_max: usize) -> KeywordSpec {
    KeywordSpec { units, w_smooth, w_max, rule: CombineRule::AllUnits }
}

#[test]
fn two_unit_hand_example() {
    let p = stream(&[vec![0.6, 0.4, 0.0], vec![0.5, 0.5, 0.0]]);
    let k = spec(vec![0, 1], 1, 2);
    // Window maxima 0.6 and 0.5.
    let c = confidence(&smooth_posteriors(&p, 1), &k, 1).unwrap();
    assert!((c - 0.30f64.sqrt()).abs() < 1e-9);
    assert!((c - 0.54772).abs() < 1e-5);
}

#[test]
fn exclude_first_uses_remaining_units() {
    let p = stream(&[vec![0.2, 0.3, 0.5]]);
    let mut k = spec(vec![0, 1, 2], 1, 1);
    k.rule = CombineRule::ExcludeFirst;
    let c = utterance_confidence(&p, &k).unwrap();
    assert!((c - 0.15f64.sqrt()).abs() < 1e-12);
}

proptest! {
    #[test]
    fn matches_direct_formula(frames in 1usize..150, dims in 2usize..6, ws in 1usize..40, wm in 1usize..120, s in any::<u64>()) {
        let r = rows(frames, dims, s);
        let units: Vec<usize> = (0..dims).filter(|k| k % 2 == 0 || *k == 1).collect();
        let got = utterance_confidence(&stream(&r), &spec(units.clone(), ws, wm)).unwrap();
        let want = common::kws_oracle(&r, &units, ws, wm);
        prop_assert!((got - want).abs() < 1e-12, "{} vs {}", got, want);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn monotone_in_keyword_posteriors(s in any::<u64>(), bumps in prop::collection::vec((0usize..80, 0usize..3, 0.0f64..0.5), 1..20)) {
        let r = rows(80, 4, s);
        let k = spec(vec![0, 1, 2], 10, 30);
        let before = utterance_confidence(&stream(&r), &k).unwrap();
        let mut up = r.clone();
        for (t, u, d) in bumps {
            up[t][u] = (up[t][u] + d).min(1.0);
        }
        let after = utterance_confidence(&stream(&up), &k).unwrap();
        prop_assert!(after >= before);
    }

    #[test]
    fn smoothing_keeps_rows_stochastic(frames in 1usize..200, w in 1usize..50, s in any::<u64>()) {
        let sm = smooth_posteriors(&stream(&rows(frames, 5, s)), w);
        for t in 0..frames {
            prop_assert!((sm.probs.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn roc_sweep_is_monotone(pos in prop::collection::vec(0.0f64..1.0, 1..50), neg in prop::collection::vec(0.0f64..1.0, 1..50)) {
        let roc = kws_roc(&pos, &neg).unwrap();
        for w in roc.windows(2) {
            prop_assert!(w[0].threshold < w[1].threshold);
            prop_assert!(w[1].far <= w[0].far && w[1].frr >= w[0].frr);
        }
    }
}

#[test]
fn perfect_separation_reaches_the_origin() {
    let roc = kws_roc(&[1.0, 1.0], &[0.0]).unwrap();
    assert!(roc.iter().any(|p| p.far == 0.0 && p.frr == 0.0));
    assert!(kws_roc(&[], &[0.5]).is_err());
}
