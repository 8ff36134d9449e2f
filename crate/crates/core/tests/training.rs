use mscr::config::RunConfig;
use mscr::model::{ModelConfig, ModelParams};
use mscr::scoring::SynthConfig;
use mscr::signal::{PreparedWindow, PreprocessConfig};
use mscr::training::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, prepare_training_set, save_checkpoint, total_loss,
    train_windows, trend_loss, uncertainty_loss, TrainConfig,
};
use proptest::prelude::*;

fn small_setup(n: usize, len: usize) -> (Vec<PreparedWindow>, ModelConfig) {
    let synth = SynthConfig {
        n_train: n,
        n_test_normal: 0,
        n_test_abnormal: 0,
        duration_s: len as f64 / 100.0,
        seed: 4,
        ..SynthConfig::default()
    };
    let pre = PreprocessConfig {
        window_len: len,
        window_stride: len,
        ..PreprocessConfig::default()
    };
    let data = synth.generate().unwrap();
    let set = prepare_training_set(&data.train, &pre).unwrap();
    let model = ModelConfig {
        global_len: len,
        channels: vec![8, 16],
        feature_dim: 16,
        ..ModelConfig::default()
    };
    (set.windows, model)
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (windows, model) = small_setup(1, 256);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 1,
        lr0: 0.0,
        ..TrainConfig::default()
    };
    let (params, report) = train_windows(&windows, &cfg, &model, |_, _| {}).unwrap();
    assert_eq!(report.epoch_losses.len(), 1);
    assert_eq!(params, ModelParams::init(&model).unwrap());
}

#[test]
fn short_run_halves_the_loss() {
    let (windows, model) = small_setup(16, 256);
    assert_eq!(windows.len(), 16);
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 4,
        lr0: 2e-3,
        ..TrainConfig::default()
    };
    let mut seen = Vec::new();
    let (_, report) = train_windows(&windows, &cfg, &model, |e, l| seen.push((e, l.total))).unwrap();
    assert_eq!(seen.len(), 20);
    assert_eq!(report.steps, 20 * 4);
    let first = report.epoch_losses[0].total;
    let last = report.epoch_losses.last().unwrap().total;
    assert!(first > 0.0);
    assert!(last < 0.5 * first, "loss went from {first} to {last}");
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let (windows, model) = small_setup(6, 256);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        lr0: 1e-3,
        ..TrainConfig::default()
    };
    let run_cfg = RunConfig::default();
    let a = train_windows(&windows, &cfg, &model, |_, _| {}).unwrap().0;
    let b = train_windows(&windows, &cfg, &model, |_, _| {}).unwrap().0;
    assert_eq!(encode_checkpoint(&a, &run_cfg), encode_checkpoint(&b, &run_cfg));
    let c = train_windows(&windows, &TrainConfig { seed: 1, ..cfg }, &model, |_, _| {}).unwrap().0;
    assert_ne!(a, c);
}

#[test]
fn checkpoint_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig::tiny();
    cfg.set("global_len", "64").unwrap();
    cfg.set("beat_len", "16").unwrap();
    cfg.validate().unwrap();
    let params = ModelParams::init(&cfg.model).unwrap();
    save_checkpoint(&params, &cfg, &path).unwrap();
    let (p2, c2) = load_checkpoint(&path).unwrap();
    assert_eq!(p2, params);
    assert_eq!(c2, cfg);
    let bytes = std::fs::read(&path).unwrap();
    assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    assert!(load_checkpoint(&dir.path().join("missing.ckpt")).is_err());
}

proptest! {
    #[test]
    fn unit_sigma_loss_is_sse(pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..64)) {
        let (x, xh): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ones = vec![1.0; x.len()];
        let sse: f64 = x.iter().zip(&xh).map(|(a, b)| (a - b) * (a - b)).sum();
        prop_assert!((uncertainty_loss(&x, &xh, &ones).unwrap() - sse).abs() <= 1e-12 * sse.max(1.0));
        prop_assert!((trend_loss(&x, &xh).unwrap() - sse).abs() <= 1e-12 * sse.max(1.0));
    }

    #[test]
    fn zero_residual_leaves_log_sigma(s in proptest::collection::vec(1e-3f64..10.0, 1..32)) {
        let x = vec![0.7; s.len()];
        let want: f64 = s.iter().map(|v| v.ln()).sum();
        prop_assert!((uncertainty_loss(&x, &x, &s).unwrap() - want).abs() <= 1e-12);
    }

    #[test]
    fn total_loss_is_linear(
        g in -50.0f64..50.0, l in -50.0f64..50.0, t in 0.0f64..50.0,
        a in 0.0f64..4.0, b in 0.0f64..4.0, k in -3.0f64..3.0,
    ) {
        let base = total_loss(g, l, t, a, b);
        prop_assert!((base - (g + a * l + b * t)).abs() <= 1e-9);
        prop_assert!((total_loss(k * g, k * l, k * t, a, b) - k * base).abs() <= 1e-9);
        prop_assert!((total_loss(g + 1.0, l, t, a, b) - (base + 1.0)).abs() <= 1e-9);
        prop_assert_eq!(total_loss(g, l, t, 0.0, 0.0), g);
    }
}
