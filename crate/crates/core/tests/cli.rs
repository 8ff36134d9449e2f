use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
# small enough for a few seconds of training
global_len = 64
beat_len = 16
window_stride = 64
channels = 4,8
feature_dim = 8
epochs = 2
batch_size = 8
lr0 = 1e-3
inference_draws = 2
n_train = 8
n_test_normal = 4
n_test_abnormal = 4
";

fn mscr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mscr"))
        .args(args)
        .env("MSCR_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mscr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fail(args: &[&str]) -> String {
    let out = mscr(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = dir.join("small.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let data = dir.join("data");
    ok(&["synth", "--config", s(&cfg), "--out", s(&data)]);
    (cfg, data)
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn default_synth_writes_the_full_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let stdout = ok(&["synth", "--out", s(&out)]);
    assert!(stdout.contains("256 train"));
    assert_eq!(csv_files(&out.join("train")).len(), 256);
    let test = csv_files(&out.join("test"));
    assert_eq!(test.len(), 128);
    let abnormal = test.iter().filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with('a')).count();
    assert_eq!(abnormal, 64);
    assert_eq!(fs::read_to_string(out.join("anomalies.csv")).unwrap().lines().count(), 65);
}

#[test]
fn synth_is_byte_identical_and_refuses_empty_sets() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let again = dir.path().join("again");
    ok(&["synth", "--config", s(&cfg), "--out", s(&again)]);
    for split in ["train", "test"] {
        let a = csv_files(&data.join(split));
        let b = csv_files(&again.join(split));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
    }
    let manifest = fs::read_to_string(data.join("manifest.txt")).unwrap();
    assert!(manifest.contains("command=synth"));
    assert!(manifest.contains("wall_time_s="));

    let empty = dir.path().join("empty.cfg");
    fs::write(&empty, "n_train = 0\nn_test_normal = 0\nn_test_abnormal = 0\n").unwrap();
    let target = dir.path().join("nothing");
    let err = fail(&["synth", "--config", s(&empty), "--out", s(&target)]);
    assert!(err.contains("no records"), "{err}");
    assert!(!target.exists());
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let run = dir.path().join("run");
    let stdout = ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run), "--seed", "3"]);
    assert!(stdout.starts_with("epoch,global,local,trend,total\n1,"));
    assert_eq!(fs::read_to_string(run.join("losses.csv")).unwrap().lines().count(), 3);
    let manifest = fs::read_to_string(run.join("manifest.txt")).unwrap();
    let hash_line = manifest.lines().find(|l| l.starts_with("checkpoint_sha256=")).unwrap();
    assert_eq!(hash_line.len(), "checkpoint_sha256=".len() + 64);
    assert!(manifest.contains("config.seed=3"));

    let run2 = dir.path().join("run2");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run2), "--seed", "3"]);
    assert_eq!(fs::read(run.join("model.ckpt")).unwrap(), fs::read(run2.join("model.ckpt")).unwrap());

    let ev = dir.path().join("ev");
    let ckpt = run.join("model.ckpt");
    let report = ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&ev)]);
    for level in ["patient", "heartbeat", "signal_point"] {
        assert!(report.contains(&format!("level={level} auc=")), "{report}");
    }
    let csv = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("level,metric,value\n"));
    assert!(csv.contains("heartbeat,f1,"));
    assert_eq!(csv_files(&ev.join("maps")).len(), 8);
    let map = fs::read_to_string(ev.join("maps").join("a0000.csv")).unwrap();
    assert!(map.starts_with("index,score,label\n0,"));
    let ev_manifest = fs::read_to_string(ev.join("manifest.txt")).unwrap();
    assert!(ev_manifest.contains(hash_line.trim_start_matches("checkpoint_")));

    let ev2 = dir.path().join("ev2");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&ev2), "--level", "patient"]);
    assert_eq!(fs::read(ev.join("scores.csv")).unwrap(), fs::read(ev2.join("scores.csv")).unwrap());
}

#[test]
fn eval_requires_annotations_for_the_level() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    let bare = dir.path().join("bare");
    fs::create_dir(&bare).unwrap();
    for p in csv_files(&data.join("test")) {
        let text = fs::read_to_string(&p).unwrap();
        let kept: String = text.lines().filter(|l| !l.starts_with("point_labels=")).map(|l| format!("{l}\n")).collect();
        fs::write(bare.join(p.file_name().unwrap()), kept).unwrap();
    }
    let ckpt = run.join("model.ckpt");
    let out = dir.path().join("ev");
    let err = fail(&["eval", "--checkpoint", s(&ckpt), "--data", s(&bare), "--out", s(&out), "--level", "signal_point"]);
    assert!(err.contains("point_labels"), "{err}");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&bare), "--out", s(&out), "--level", "patient"]);
}

#[test]
fn train_reports_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let out = dir.path().join("o");
    let err = fail(&["train", "--config", s(&cfg), "--data", s(&dir.path().join("missing")), "--out", s(&out)]);
    assert!(err.contains("missing"), "{err}");

    let bad = data.join("train").join("n0003.csv");
    let mut text = fs::read_to_string(&bad).unwrap();
    text.push_str("not-a-number\n");
    fs::write(&bad, text).unwrap();
    let lines = fs::read_to_string(&bad).unwrap().lines().count();
    let err = fail(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    assert!(err.contains(&format!("n0003.csv:{lines}:")), "{err}");

    let typo = dir.path().join("typo.cfg");
    fs::write(&typo, "epochs = 2\nepoch = 3\n").unwrap();
    let err = fail(&["train", "--config", s(&typo), "--data", s(&data), "--out", s(&out)]);
    assert!(err.contains("typo.cfg") && err.contains("epoch"), "{err}");
}

#[test]
fn mask_ratio_sweep_writes_one_model_per_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let run = dir.path().join("sweep");
    let stdout = ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run), "--mask-ratio", "0.0,0.3"]);
    assert!(stdout.contains("# mask_ratio=0.3"));
    for r in ["0", "0.3"] {
        assert!(run.join(format!("model_mask{r}.ckpt")).exists());
        assert!(run.join(format!("losses_mask{r}.csv")).exists());
    }
    let manifests = csv_files(&run).into_iter().filter(|p| p.ends_with("manifest.txt")).count();
    assert_eq!(manifests, 1);
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let stdout = ok(&["gradcheck"]);
    assert!(stdout.contains("PASS"));
    assert!(stdout.contains("dec_t"));
    let out = mscr(&["gradcheck", "--corrupt-backward"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));

    let dir = tempfile::tempdir().unwrap();
    let big = dir.path().join("big.cfg");
    fs::write(&big, "channels = 16,32,64\nfeature_dim = 64\nglobal_len = 512\nbeat_len = 96\n").unwrap();
    let err = fail(&["gradcheck", "--config", s(&big)]);
    assert!(err.contains("limited to 50000"), "{err}");
}
