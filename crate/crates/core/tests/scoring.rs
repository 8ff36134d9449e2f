use mscr::model::{ModelConfig, ModelParams};
use mscr::scoring::{
    aggregate_leads, best_f1, evaluate, f1_at, reassemble, roc_auc, sliding_windows, AnomalyKind, Level, ScoreConfig,
    Scorer, SignalWindow, SynthConfig,
};
use mscr::signal::{EcgRecord, PreparedRecord, PreprocessConfig};
use mscr::training::TrainConfig;
use mscr::Error;
use proptest::prelude::*;

fn tiny_setup() -> (ModelParams, PreprocessConfig) {
    let pre = PreprocessConfig {
        window_len: 64,
        window_stride: 32,
        beat_len: 16,
        ..PreprocessConfig::default()
    };
    (ModelParams::init(&ModelConfig::tiny()).unwrap(), pre)
}

fn small_dataset() -> mscr::scoring::SynthDataset {
    SynthConfig {
        n_train: 4,
        n_test_normal: 4,
        n_test_abnormal: 4,
        seed: 2,
        ..SynthConfig::default()
    }
    .generate()
    .unwrap()
}

#[test]
fn auc_and_f1_examples() {
    assert_eq!(roc_auc(&[1.0, 2.0, 3.0, 4.0], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_eq!(roc_auc(&[2.0; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    assert_eq!(roc_auc(&[3.0, 1.0, 2.0, 4.0], &[0, 1, 0, 1]).unwrap(), 0.5);
    assert!(matches!(roc_auc(&[1.0, 2.0], &[1, 1]), Err(Error::Contract(_))));
    assert_eq!(best_f1(&[1.0, 2.0, 3.0], &[0, 1, 1]).unwrap(), (1.0, 1.5));
    let (f, _) = best_f1(&[1.0, 2.0, 3.0, 4.0], &[1, 0, 1, 0]).unwrap();
    assert!(f >= 2.0 / 3.0 - 1e-12);
    assert!(best_f1(&[1.0], &[0]).is_err());
}

#[test]
fn window_offsets_and_reassembly() {
    let x: Vec<f64> = (0..640).map(|i| i as f64).collect();
    let ws = sliding_windows(&x, 320, 160).unwrap();
    assert_eq!(ws.iter().map(|w| w.offset).collect::<Vec<_>>(), [0, 160, 320]);
    assert_eq!(sliding_windows(&x[..320], 320, 320).unwrap().len(), 1);
    assert!(sliding_windows(&x[..100], 320, 1).is_err());

    let constant: Vec<SignalWindow> = ws
        .iter()
        .map(|w| SignalWindow {
            offset: w.offset,
            values: vec![2.5; 320],
        })
        .collect();
    let (map, cover) = reassemble(640, &constant).unwrap();
    assert!(map.iter().all(|&v| v == 2.5));
    assert_eq!((cover[0], cover[200], cover[639]), (1, 2, 1));

    let parts = sliding_windows(&x, 160, 160).unwrap();
    let (back, _) = reassemble(640, &parts).unwrap();
    assert_eq!(back, x);
}

#[test]
fn map_sums_to_score_and_stays_non_negative() {
    let (params, pre) = tiny_setup();
    let scorer = Scorer::new(&params, &pre, &TrainConfig::default(), ScoreConfig::default());
    let data = small_dataset();
    for rec in data.test.iter().take(3) {
        let prepared = PreparedRecord::from_record(rec, &pre).unwrap();
        for w in prepared.windows(&pre).unwrap() {
            let r = scorer.anomaly_score(&w).unwrap();
            let total: f64 = r.point_map.iter().sum();
            assert!((total - r.score).abs() <= 1e-9 * r.score.max(1.0));
            assert!((r.term_breakdown.iter().sum::<f64>() - r.score).abs() <= 1e-9 * r.score.max(1.0));
            assert!(r.point_map.iter().all(|&v| v >= 0.0));
            assert_eq!(r.beat_scores.len(), w.beats.len());
        }
    }
}

#[test]
fn beatless_window_falls_back_to_global_terms() {
    let (params, pre) = tiny_setup();
    let scorer = Scorer::new(&params, &pre, &TrainConfig::default(), ScoreConfig::default());
    let flat = EcgRecord::new("flat", vec![0.0; 200], 100.0).unwrap();
    let prepared = PreparedRecord::from_record(&flat, &pre).unwrap();
    let w = prepared.window(0, &pre).unwrap();
    assert!(w.beats.is_empty());
    let r = scorer.anomaly_score(&w).unwrap();
    assert!(r.fallback);
    assert_eq!(r.term_breakdown[1], 0.0);
    assert!(r.beat_scores.is_empty());
    let rs = scorer.score_record(&flat).unwrap();
    assert_eq!(rs.fallback_windows, prepared.window_offsets(&pre).unwrap().len());
}

#[test]
fn scoring_is_deterministic_and_order_preserving() {
    let (params, pre) = tiny_setup();
    let scorer = Scorer::new(&params, &pre, &TrainConfig::default(), ScoreConfig::default());
    let data = small_dataset();
    let a = scorer.score_records(&data.test).unwrap();
    let b = scorer.score_records(&data.test).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().map(|r| r.id.clone()).collect::<Vec<_>>(), data.test.iter().map(|r| r.id.clone()).collect::<Vec<_>>());
    for r in &a {
        assert_eq!(r.point_map.len(), r.coverage.len());
        assert!(r.coverage.iter().all(|&c| c > 0));
    }
}

#[test]
fn evaluation_needs_the_matching_annotation() {
    let (params, pre) = tiny_setup();
    let scorer = Scorer::new(&params, &pre, &TrainConfig::default(), ScoreConfig::default());
    let data = small_dataset();
    let mut scores = scorer.score_records(&data.test).unwrap();
    for level in [Level::Patient, Level::Heartbeat, Level::SignalPoint] {
        let r = evaluate(&scores, level).unwrap();
        assert!((0.0..=1.0).contains(&r.auc));
        assert_eq!(r.f1.is_some(), level == Level::Heartbeat);
    }
    for s in &mut scores {
        s.point_labels = None;
        s.beat_labels = None;
    }
    match evaluate(&scores, Level::SignalPoint) {
        Err(Error::Contract(m)) => assert!(m.contains("point_labels"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(evaluate(&scores, Level::Heartbeat).is_err());
    for s in &mut scores {
        s.record_label = None;
    }
    match evaluate(&scores, Level::Patient) {
        Err(Error::Contract(m)) => assert!(m.contains("label="), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn leads_are_averaged() {
    let (params, pre) = tiny_setup();
    let scorer = Scorer::new(&params, &pre, &TrainConfig::default(), ScoreConfig::default());
    let data = small_dataset();
    let a = scorer.score_record(&data.test[0]).unwrap();
    let b = scorer.score_record(&data.test[1]).unwrap();
    let m = aggregate_leads(&[a.clone(), b.clone()]).unwrap();
    assert!((m.score - (a.score + b.score) / 2.0).abs() < 1e-12);
    assert!((m.point_map[10] - (a.point_map[10] + b.point_map[10]) / 2.0).abs() < 1e-12);
    assert!(aggregate_leads(&[]).is_err());
}

#[test]
fn generator_balances_anomaly_types() {
    let data = SynthConfig {
        n_train: 0,
        n_test_normal: 200,
        n_test_abnormal: 200,
        ..SynthConfig::default()
    }
    .generate()
    .unwrap();
    assert_eq!(data.test.len(), 400);
    for kind in AnomalyKind::ALL {
        assert_eq!(data.anomaly_kinds.iter().filter(|(_, k)| *k == kind).count(), 50);
    }
    let abnormal = data.test.iter().filter(|r| r.point_labels.as_ref().unwrap().contains(&1)).count();
    assert_eq!(abnormal, 200);
    assert_eq!(SynthConfig::default().generate().unwrap(), SynthConfig::default().generate().unwrap());
}

fn brute_auc(s: &[f64], l: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..s.len() {
        for j in 0..s.len() {
            if l[i] == 1 && l[j] == 0 {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec((0i32..12).prop_map(|v| v as f64 * 0.5), n),
            proptest::collection::vec(0u8..2, n),
        )
            .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
    })
}

proptest! {
    #[test]
    fn auc_matches_pair_counting((s, l) in labelled()) {
        prop_assert_eq!(roc_auc(&s, &l).unwrap(), brute_auc(&s, &l));
    }

    #[test]
    fn auc_ignores_monotone_transforms((s, l) in labelled(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let base = roc_auc(&s, &l).unwrap();
        for t in [
            s.iter().map(|v| v.exp()).collect::<Vec<_>>(),
            s.iter().map(|v| a * v + b).collect(),
            s.iter().map(|v| v * v * v).collect(),
        ] {
            prop_assert_eq!(roc_auc(&t, &l).unwrap(), base);
        }
    }

    #[test]
    fn auc_of_negation_is_complement(
        n in 2usize..40,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let mut l: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        l[0] = 0;
        l[1] = 1;
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((roc_auc(&s, &l).unwrap() + roc_auc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn best_f1_beats_any_probe((s, l) in labelled(), probes in proptest::collection::vec(-1.0f64..7.0, 1..20)) {
        let (best, t) = best_f1(&s, &l).unwrap();
        prop_assert_eq!(f1_at(&s, &l, t).unwrap(), best);
        for p in probes {
            prop_assert!(f1_at(&s, &l, p).unwrap() <= best);
        }
    }
}
