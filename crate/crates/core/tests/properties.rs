use proptest::collection::vec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ratad::dataset::{destandardize, make_windows, standardize, LabeledSeries, Region, Span};
use ratad::metrics::{auc_weighted, continuous_labels, pointwise_prf, vus, CurveKind, GroundTruth};
use ratad::retrieval::{ncc_max, retrieve_best, subsample_pool, CandidatePool};
use ratad::scoring::{sma_smooth, ScoreSeries};
use ratad::Window;

fn non_flat(v: &[f64]) -> bool {
    v.iter().map(|x| x * x).sum::<f64>() > 1e-6
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ncc_score_is_bounded(pair in (2usize..80).prop_flat_map(|n| (vec(-1e3..1e3f64, n), vec(-1e3..1e3f64, n)))) {
        let (x, y) = pair;
        prop_assume!(non_flat(&x) && non_flat(&y));
        let r = ncc_max(&x, &y).unwrap();
        prop_assert!(r.score.abs() <= 1.0);
        prop_assert!(r.best_lag.unsigned_abs() < x.len() as u64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ncc_is_scale_invariant(
        pair in (2usize..200).prop_flat_map(|n| (vec(-10.0..10.0f64, n), vec(-10.0..10.0f64, n))),
        a in 1e-3..1e3f64,
        b in 1e-3..1e3f64,
    ) {
        let (x, y) = pair;
        prop_assume!(non_flat(&x) && non_flat(&y));
        let base = ncc_max(&x, &y).unwrap().score;
        let xs: Vec<f64> = x.iter().map(|v| a * v).collect();
        let ys: Vec<f64> = y.iter().map(|v| b * v).collect();
        prop_assert!((ncc_max(&xs, &ys).unwrap().score - base).abs() <= 1e-9);
    }

    #[test]
    fn retrieval_skips_own_series(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |id: &str| Window {
            series_id: id.into(),
            start: 0,
            input: (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            future: vec![0.0; 4],
        };
        let query = draw("q");
        let mut entries: Vec<Window> = (0..5).map(|i| draw(&format!("o{i}"))).collect();
        // A perfect match from the query's own series must be ignored.
        entries.push(Window { future: vec![1.0; 4], ..query.clone() });
        let pool = CandidatePool::new("d", entries);
        let (picked, _) = retrieve_best(&query, &pool).unwrap();
        prop_assert_ne!(picked.series_id, "q");
    }

    #[test]
    fn subsample_keeps_ceiling_in_order(n in 1usize..300, fraction in 0.01..=1.0f64, seed in any::<u64>()) {
        let entries = (0..n)
            .map(|i| Window { series_id: format!("s{i}"), start: i, input: vec![1.0], future: vec![0.0] })
            .collect();
        let pool = CandidatePool::new("d", entries);
        let sub = subsample_pool(&pool, fraction, seed).unwrap();
        let expected = ((fraction * n as f64) - 1e-9 * (fraction * n as f64).max(1.0)).ceil().max(1.0) as usize;
        prop_assert_eq!(sub.entries.len(), expected.min(n));
        prop_assert!(sub.entries.windows(2).all(|w| w[0].start < w[1].start));
        prop_assert_eq!(sub, subsample_pool(&pool, fraction, seed).unwrap());
    }

    #[test]
    fn metrics_ignore_monotone_transforms(
        scores in vec(0.0..1.0f64, 8..120),
        span_at in 0.0..1.0f64,
        span_len in 0usize..10,
        w in 0usize..12,
    ) {
        let len = scores.len();
        let s = ((span_at * len as f64) as usize).min(len - 1);
        let truth = GroundTruth::from_spans(len, vec![(s as i64, (s + span_len).min(len - 1) as i64)]);
        let warped: Vec<f64> = scores.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
        let soft = continuous_labels(&truth, w);
        for kind in [CurveKind::Roc, CurveKind::Pr] {
            prop_assert_eq!(auc_weighted(&scores, &soft, kind).unwrap(), auc_weighted(&warped, &soft, kind).unwrap());
        }
        prop_assert_eq!(vus(&scores, &truth, w, 5).unwrap(), vus(&warped, &truth, w, 5).unwrap());
    }

    #[test]
    fn soft_labels_grow_with_width(len in 5usize..100, s in 0usize..100, extra in 0usize..8, w1 in 0usize..20, dw in 0usize..20) {
        let s = s % len;
        let truth = GroundTruth::from_spans(len, vec![(s as i64, (s + extra).min(len - 1) as i64)]);
        let narrow = continuous_labels(&truth, w1);
        let wide = continuous_labels(&truth, w1 + dw);
        prop_assert!(narrow.iter().zip(&wide).all(|(a, b)| a <= b));
        prop_assert!(wide.iter().all(|&l| (0.0..=1.0).contains(&l)));
    }

    #[test]
    fn sma_contracts_and_keeps_mass(raw in vec(0.0..100.0f64, 1..200), n in 1usize..30) {
        let out = sma_smooth(&ScoreSeries::raw("s", 0, raw.clone()), n).unwrap().scores;
        let max_raw = raw.iter().cloned().fold(0.0, f64::max);
        let max_out = out.iter().cloned().fold(0.0, f64::max);
        prop_assert_eq!(out.len(), raw.len());
        prop_assert!(max_out <= max_raw * (1.0 + 1e-12));
        let drift = (out.iter().sum::<f64>() - raw.iter().sum::<f64>()).abs();
        prop_assert!(drift <= n as f64 * max_raw + 1e-9);
    }

    #[test]
    fn standardization_round_trips(values in vec(-1e4..1e4f64, 6..120), cut in 0.2..0.8f64) {
        let train_end = ((values.len() as f64 * cut) as usize).clamp(2, values.len() - 1);
        let series = LabeledSeries::new("s", "d", values.clone(), train_end, vec![], "").unwrap();
        let (z, params) = standardize(&series).unwrap();
        let back = destandardize(&z, &params);
        for (a, b) in back.values.iter().zip(&values) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn standardization_ignores_test_values(values in vec(-100.0..100.0f64, 6..80), noise in vec(-1e3..1e3f64, 80)) {
        let train_end = values.len() / 2;
        let series = LabeledSeries::new("s", "d", values.clone(), train_end, vec![], "").unwrap();
        let mut mutated = series.clone();
        for (v, n) in mutated.values[train_end..].iter_mut().zip(&noise) {
            *v += n;
        }
        prop_assert_eq!(standardize(&series).unwrap().1, standardize(&mutated).unwrap().1);
    }

    #[test]
    fn windows_stay_inside_their_region(
        len in 20usize..300,
        cut in 0.2..0.8f64,
        input in 1usize..40,
        horizon in 1usize..20,
        stride in 1usize..30,
        test_region in any::<bool>(),
    ) {
        let train_end = ((len as f64 * cut) as usize).clamp(1, len - 1);
        let values: Vec<f64> = (0..len).map(|i| i as f64).collect();
        let series = LabeledSeries::new("s", "d", values, train_end, vec![Span::new(train_end, train_end)], "").unwrap();
        let (region, lo, hi) = if test_region {
            (Region::Test, train_end, len)
        } else {
            (Region::Train, 0, train_end)
        };
        let out = make_windows(&series, region, input, horizon, stride).unwrap();
        let room = hi - lo;
        let expected = if room >= input + horizon { (room - input - horizon) / stride + 1 } else { 0 };
        prop_assert_eq!(out.windows.len(), expected);
        for (i, w) in out.windows.iter().enumerate() {
            prop_assert_eq!(w.start, lo + i * stride);
            prop_assert!(w.start + input + horizon <= hi);
            prop_assert_eq!(w.input[0], w.start as f64);
            prop_assert_eq!(w.future[0], (w.start + input) as f64);
        }
    }
}

#[test]
fn prf_matches_confusion_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let pred: Vec<u8> = (0..1000).map(|_| u8::from(rng.gen_bool(0.2))).collect();
        let truth: Vec<u8> = (0..1000).map(|_| u8::from(rng.gen_bool(0.1))).collect();
        let tp = pred.iter().zip(&truth).filter(|(p, t)| **p == 1 && **t == 1).count() as f64;
        let predicted = pred.iter().filter(|p| **p == 1).count() as f64;
        let actual = truth.iter().filter(|t| **t == 1).count() as f64;
        let (precision, recall, f1) = pointwise_prf(&pred, &truth).unwrap();
        assert_eq!(precision, tp / predicted);
        assert_eq!(recall, tp / actual);
        assert!((f1 - 2.0 * tp / (predicted + actual)).abs() < 1e-12);
    }
}

#[test]
fn random_scores_give_chance_vus() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let len = 10_000;
    let scores: Vec<f64> = (0..len).map(|_| rng.gen()).collect();
    let spans: Vec<(i64, i64)> = (0..20)
        .map(|_| {
            let s = rng.gen_range(0..len as i64 - 50);
            (s, s + rng.gen_range(5..50))
        })
        .collect();
    let truth = GroundTruth::from_spans(len, spans);
    let (roc, _) = vus(&scores, &truth, 20, 20).unwrap();
    assert!((0.4..=0.6).contains(&roc), "random VUS-ROC {roc}");
}
