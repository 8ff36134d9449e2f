//! The four subcommands as library functions. `main.rs` only parses flags
//! and prints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::config::{Preset, RunConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::scoring::{evaluate, map_csv, Level, MetricReport, RecordScore, Scorer};
use crate::signal::{read_split, EcgRecord};
use crate::training::{
    check_model_gradients, encode_checkpoint, load_checkpoint, train_with, GradCheckReport,
    TrainConfig, TrainReport,
};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// SHA-256 of `blob <len>\0<content>`, the git object-id construction.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

/// `key=value` record of one run, written once next to its outputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, cfg: &RunConfig) -> Self {
        let mut m = Self::default();
        m.push("command", command);
        m.push(
            "config_path",
            config_path.map_or_else(|| "-".to_string(), |p| p.display().to_string()),
        );
        m.push("seed", cfg.train.seed);
        for (k, v) in cfg.to_pairs() {
            m.push(&format!("config.{k}"), v);
        }
        m
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        write_file(&path, self.to_text().as_bytes())?;
        Ok(path)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Preset, then config file, then individual flags.
pub fn resolve_config(preset: Preset, config: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::preset(preset);
    if let Some(p) = config {
        cfg.apply_file(p)?;
    }
    if let Some(s) = seed {
        cfg.set("seed", &s.to_string()).map_err(Error::contract)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `0.3` or `0.0,0.3,0.7`.
pub fn parse_mask_ratios(s: &str) -> Result<Vec<f64>> {
    let ratios = s
        .split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::contract(format!("invalid mask ratio `{x}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(r) = ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(Error::contract(format!("mask ratio must be in [0, 1), got {r}")));
    }
    Ok(ratios)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub train: usize,
    pub test_normal: usize,
    pub test_abnormal: usize,
    pub manifest: PathBuf,
}

/// Writes `train/`, `test/`, `anomalies.csv` and a manifest under `out`.
pub fn cmd_synth(cfg: &RunConfig, config_path: Option<&Path>, out: &Path) -> Result<SynthSummary> {
    let start = Instant::now();
    let data = cfg.synth.generate()?;
    let train_dir = out.join("train");
    let test_dir = out.join("test");
    create_dir(&train_dir)?;
    create_dir(&test_dir)?;
    for r in &data.train {
        r.write(&train_dir.join(format!("{}.csv", r.id)))?;
    }
    for r in &data.test {
        r.write(&test_dir.join(format!("{}.csv", r.id)))?;
    }
    let mut kinds = String::from("id,anomaly\n");
    for (id, k) in &data.anomaly_kinds {
        writeln!(kinds, "{id},{}", k.name()).unwrap();
    }
    write_file(&out.join("anomalies.csv"), kinds.as_bytes())?;

    let abnormal = data.anomaly_kinds.len();
    let mut m = RunManifest::new("synth", config_path, cfg);
    m.push("output", out.display());
    m.push("train_records", data.train.len());
    m.push("test_normal_records", data.test.len() - abnormal);
    m.push("test_abnormal_records", abnormal);
    m.push("wall_time_s", format!("{:.3}", start.elapsed().as_secs_f64()));
    Ok(SynthSummary {
        train: data.train.len(),
        test_normal: data.test.len() - abnormal,
        test_abnormal: abnormal,
        manifest: m.write(out)?,
    })
}

fn split_dir(data: &Path, split: &str) -> PathBuf {
    let sub = data.join(split);
    if sub.is_dir() {
        sub
    } else {
        data.to_path_buf()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub mask_ratio: f64,
    pub checkpoint: PathBuf,
    pub checkpoint_hash: String,
    pub report: TrainReport,
}

/// Trains one model per mask ratio (or one with the configured ratios when
/// `mask_ratios` is empty). Per-epoch loss lines go to `log`.
pub fn cmd_train(
    cfg: &RunConfig,
    config_path: Option<&Path>,
    data: &Path,
    out: &Path,
    mask_ratios: &[f64],
    mut log: impl FnMut(&str),
) -> Result<Vec<TrainOutcome>> {
    let start = Instant::now();
    let dir = split_dir(data, "train");
    let records = read_split(&dir)?;
    if records.is_empty() {
        return Err(Error::contract(format!("no .csv records in {}", dir.display())));
    }
    create_dir(out)?;
    let sweep = mask_ratios.len() > 1;
    let runs: Vec<Option<f64>> = if mask_ratios.is_empty() {
        vec![None]
    } else {
        mask_ratios.iter().copied().map(Some).collect()
    };

    let mut m = RunManifest::new("train", config_path, cfg);
    m.push("data", dir.display());
    m.push("records", records.len());
    let mut outcomes = Vec::new();
    for ratio in runs {
        let mut run_cfg = cfg.clone();
        if let Some(r) = ratio {
            run_cfg.set("mask_ratio", &r.to_string()).map_err(Error::contract)?;
        }
        let suffix = match ratio {
            Some(r) if sweep => format!("_mask{r}"),
            _ => String::new(),
        };
        if sweep {
            log(&format!("# mask_ratio={}", run_cfg.train.mask_ratio_g));
        }
        log("epoch,global,local,trend,total");
        let (params, mut report) = train_with(
            &records,
            &run_cfg.train,
            &run_cfg.model,
            &run_cfg.preprocess,
            |e, l| log(&format!("{},{},{},{},{}", e + 1, l.global, l.local, l.trend, l.total)),
        )?;
        let ckpt = out.join(format!("model{suffix}.ckpt"));
        let bytes = encode_checkpoint(&params, &run_cfg);
        write_file(&ckpt, &bytes)?;
        let mut losses = String::from("epoch,global,local,trend,total\n");
        for (e, l) in report.epoch_losses.iter().enumerate() {
            writeln!(losses, "{},{},{},{},{}", e + 1, l.global, l.local, l.trend, l.total).unwrap();
        }
        write_file(&out.join(format!("losses{suffix}.csv")), losses.as_bytes())?;
        report.checkpoint = Some(ckpt.clone());
        let hash = content_hash(&bytes);
        m.push(&format!("checkpoint{suffix}"), ckpt.display());
        m.push(&format!("checkpoint{suffix}_sha256"), &hash);
        m.push(&format!("windows{suffix}"), report.windows);
        m.push(&format!("skipped{suffix}"), report.skipped);
        outcomes.push(TrainOutcome {
            mask_ratio: run_cfg.train.mask_ratio_g,
            checkpoint: ckpt,
            checkpoint_hash: hash,
            report,
        });
    }
    m.push("wall_time_s", format!("{:.3}", start.elapsed().as_secs_f64()));
    m.write(out)?;
    Ok(outcomes)
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub reports: Vec<MetricReport>,
    pub scores: Vec<RecordScore>,
}

fn available_levels(scores: &[RecordScore]) -> Vec<Level> {
    let mut levels = Vec::new();
    if scores.iter().all(|s| s.record_label.is_some()) {
        levels.push(Level::Patient);
    }
    if scores.iter().all(|s| s.point_labels.is_some()) {
        levels.push(Level::Heartbeat);
        levels.push(Level::SignalPoint);
    }
    levels
}

/// Scores `data/test` (or `data`) with a checkpoint. `overrides` may change
/// scoring and seeds but not the architecture stored in the checkpoint.
pub fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    level: Option<Level>,
    out: &Path,
    overrides: impl FnOnce(&mut RunConfig) -> Result<()>,
) -> Result<EvalOutcome> {
    let start = Instant::now();
    let bytes = fs::read(checkpoint).map_err(|e| Error::io(checkpoint, e))?;
    let (params, mut cfg) = load_checkpoint(checkpoint)?;
    overrides(&mut cfg)?;
    if cfg.model != params.config {
        return Err(Error::contract(
            "model settings cannot be changed at evaluation time; they come from the checkpoint",
        ));
    }
    cfg.validate()?;
    let dir = split_dir(data, "test");
    let records = read_split(&dir)?;
    if records.is_empty() {
        return Err(Error::contract(format!("no .csv records in {}", dir.display())));
    }

    let mut scorer = Scorer::new(&params, &cfg.preprocess, &cfg.train, cfg.score.clone());
    if cfg.score.term_scaling {
        let train_dir = data.join("train");
        let train: Vec<EcgRecord> = read_split(&train_dir)?;
        scorer.scale = scorer.fit_term_scale(&train)?;
    }
    let scores = scorer.score_records(&records)?;
    let levels = match level {
        Some(l) => vec![l],
        None => {
            let l = available_levels(&scores);
            if l.is_empty() {
                return Err(Error::contract(
                    "test records carry neither `label=` nor `point_labels=` lines; nothing to evaluate",
                ));
            }
            l
        }
    };
    let reports = levels
        .iter()
        .map(|&l| evaluate(&scores, l))
        .collect::<Result<Vec<_>>>()?;

    let maps = out.join("maps");
    create_dir(&maps)?;
    let mut text = String::new();
    let mut csv = String::from("level,metric,value\n");
    for r in &reports {
        writeln!(text, "{}", r.to_text()).unwrap();
        for row in r.csv_rows() {
            writeln!(csv, "{row}").unwrap();
        }
    }
    write_file(&out.join("metrics.txt"), text.as_bytes())?;
    write_file(&out.join("metrics.csv"), csv.as_bytes())?;
    let mut per_record = String::from("id,score,label,global,local,trend,fallback_windows\n");
    for s in &scores {
        let label = s.record_label.map_or_else(String::new, |l| l.as_int().to_string());
        let [g, l, t] = s.term_breakdown;
        writeln!(per_record, "{},{},{label},{g},{l},{t},{}", s.id, s.score, s.fallback_windows).unwrap();
        write_file(&maps.join(format!("{}.csv", s.id)), map_csv(s).as_bytes())?;
    }
    write_file(&out.join("scores.csv"), per_record.as_bytes())?;

    let mut m = RunManifest::new("eval", None, &cfg);
    m.push("checkpoint", checkpoint.display());
    m.push("checkpoint_sha256", content_hash(&bytes));
    m.push("data", dir.display());
    m.push("output", out.display());
    m.push("records", scores.len());
    for r in &reports {
        m.push(&format!("auc.{}", r.level), r.auc);
    }
    m.push("wall_time_s", format!("{:.3}", start.elapsed().as_secs_f64()));
    m.write(out)?;
    Ok(EvalOutcome { reports, scores })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOutcome {
    pub report: GradCheckReport,
    pub passed: bool,
}

/// Finite-difference check of the full training loss on `model`.
/// `corrupt` perturbs the analytic gradients as a negative control.
pub fn cmd_gradcheck(model: &ModelConfig, train: &TrainConfig, corrupt: bool) -> Result<GradCheckOutcome> {
    let report = check_model_gradients(model, train, GRADCHECK_EPS, corrupt)?;
    let passed = report.max_error <= GRADCHECK_TOLERANCE;
    Ok(GradCheckOutcome { report, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            content_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn mask_ratio_lists() {
        assert_eq!(parse_mask_ratios("0.0, 0.3,0.7").unwrap(), vec![0.0, 0.3, 0.7]);
        assert!(parse_mask_ratios("0.3,x").is_err());
        assert!(parse_mask_ratios("1.0").is_err());
    }
}
