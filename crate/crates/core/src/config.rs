//! Run configuration: every tunable in one flat `key = value` file.
//!
//! ```text
//! # comments start with '#'
//! epochs = 30
//! channels = 16,32,64
//! mask_ratio = 0.3
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::scoring::{ScoreConfig, SynthConfig};
use crate::signal::PreprocessConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Full protocol: 50 epochs, batch 32, lr 1e-4.
    Paper,
    /// Shortened schedule that fits a single-core desk run.
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::contract(format!("unknown preset `{other}` (paper, desk)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub score: ScoreConfig,
    pub synth: SynthConfig,
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse::<T>()
        .map_err(|_| format!("invalid value `{v}` for `{key}`"))
}

fn parse_bool(key: &str, v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(format!("invalid value `{v}` for `{key}`, expected true or false")),
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let mut c = Self::default();
        if p == Preset::Desk {
            c.train.epochs = 30;
            c.train.batch_size = 16;
            c.train.lr0 = 2e-3;
        }
        c
    }

    /// Sets one key. Errors carry only the message; callers add location.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "seed" => {
                let s: u64 = parse_num(key, v)?;
                self.train.seed = s;
                self.model.seed = s;
                self.score.seed = s;
                self.synth.seed = s;
            }
            "model_seed" => self.model.seed = parse_num(key, v)?,
            "score_seed" => self.score.seed = parse_num(key, v)?,
            "synth_seed" => self.synth.seed = parse_num(key, v)?,

            "target_fs" => self.preprocess.target_fs = parse_num(key, v)?,
            "bandpass_lo_hz" => self.preprocess.bandpass_lo_hz = parse_num(key, v)?,
            "bandpass_hi_hz" => self.preprocess.bandpass_hi_hz = parse_num(key, v)?,
            "bandpass_order" => self.preprocess.bandpass_order = parse_num(key, v)?,
            "notch_hz" => self.preprocess.notch_hz = parse_num(key, v)?,
            "notch_q" => self.preprocess.notch_q = parse_num(key, v)?,
            "trend_window" => self.preprocess.trend_window = parse_num(key, v)?,
            "window_stride" => self.preprocess.window_stride = parse_num(key, v)?,
            "global_len" => {
                let n: usize = parse_num(key, v)?;
                self.preprocess.window_len = n;
                self.model.global_len = n;
            }
            "beat_len" => {
                let n: usize = parse_num(key, v)?;
                self.preprocess.beat_len = n;
                self.model.beat_len = n;
            }

            "channels" => {
                self.model.channels = v
                    .split(',')
                    .map(|c| parse_num::<usize>(key, c.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "feature_dim" => self.model.feature_dim = parse_num(key, v)?,
            "cross_attention" => self.model.cross_attention = parse_bool(key, v)?,
            "uncertainty" => self.model.uncertainty = parse_bool(key, v)?,
            "trend_module" => self.model.trend_module = parse_bool(key, v)?,

            "alpha" => self.train.alpha = parse_num(key, v)?,
            "beta" => self.train.beta = parse_num(key, v)?,
            "epochs" => self.train.epochs = parse_num(key, v)?,
            "batch_size" => self.train.batch_size = parse_num(key, v)?,
            "lr0" => self.train.lr0 = parse_num(key, v)?,
            "weight_decay" => self.train.weight_decay = parse_num(key, v)?,
            "mask_ratio" => {
                let r: f64 = parse_num(key, v)?;
                self.train.mask_ratio_g = r;
                self.train.mask_ratio_l = r;
            }
            "mask_ratio_g" => self.train.mask_ratio_g = parse_num(key, v)?,
            "mask_ratio_l" => self.train.mask_ratio_l = parse_num(key, v)?,
            "k_regions" => self.train.k_regions = parse_num(key, v)?,

            "inference_draws" => self.score.inference_draws = parse_num(key, v)?,
            "normalize_by_beats" => self.score.normalize_by_beats = parse_bool(key, v)?,
            "term_scaling" => self.score.term_scaling = parse_bool(key, v)?,

            "n_train" => self.synth.n_train = parse_num(key, v)?,
            "n_test_normal" => self.synth.n_test_normal = parse_num(key, v)?,
            "n_test_abnormal" => self.synth.n_test_abnormal = parse_num(key, v)?,
            "synth_fs" => self.synth.fs = parse_num(key, v)?,
            "synth_duration_s" => self.synth.duration_s = parse_num(key, v)?,
            "bpm_min" => self.synth.bpm_min = parse_num(key, v)?,
            "bpm_max" => self.synth.bpm_max = parse_num(key, v)?,
            "bpm_jitter" => self.synth.bpm_jitter = parse_num(key, v)?,
            "amplitude_jitter" => self.synth.amplitude_jitter = parse_num(key, v)?,
            "noise_std" => self.synth.noise_std = parse_num(key, v)?,
            "baseline_wander" => self.synth.baseline_wander = parse_num(key, v)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Every field as `(key, value)`; feeding these back through
    /// [`RunConfig::set`] reproduces the config exactly.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let p = &self.preprocess;
        let m = &self.model;
        let t = &self.train;
        let s = &self.score;
        let y = &self.synth;
        let channels = m.channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("seed", t.seed.to_string()),
            ("model_seed", m.seed.to_string()),
            ("score_seed", s.seed.to_string()),
            ("synth_seed", y.seed.to_string()),
            ("target_fs", p.target_fs.to_string()),
            ("bandpass_lo_hz", p.bandpass_lo_hz.to_string()),
            ("bandpass_hi_hz", p.bandpass_hi_hz.to_string()),
            ("bandpass_order", p.bandpass_order.to_string()),
            ("notch_hz", p.notch_hz.to_string()),
            ("notch_q", p.notch_q.to_string()),
            ("trend_window", p.trend_window.to_string()),
            ("window_stride", p.window_stride.to_string()),
            ("global_len", m.global_len.to_string()),
            ("beat_len", m.beat_len.to_string()),
            ("channels", channels),
            ("feature_dim", m.feature_dim.to_string()),
            ("cross_attention", m.cross_attention.to_string()),
            ("uncertainty", m.uncertainty.to_string()),
            ("trend_module", m.trend_module.to_string()),
            ("alpha", t.alpha.to_string()),
            ("beta", t.beta.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr0", t.lr0.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("mask_ratio_g", t.mask_ratio_g.to_string()),
            ("mask_ratio_l", t.mask_ratio_l.to_string()),
            ("k_regions", t.k_regions.to_string()),
            ("inference_draws", s.inference_draws.to_string()),
            ("normalize_by_beats", s.normalize_by_beats.to_string()),
            ("term_scaling", s.term_scaling.to_string()),
            ("n_train", y.n_train.to_string()),
            ("n_test_normal", y.n_test_normal.to_string()),
            ("n_test_abnormal", y.n_test_abnormal.to_string()),
            ("synth_fs", y.fs.to_string()),
            ("synth_duration_s", y.duration_s.to_string()),
            ("bpm_min", y.bpm_min.to_string()),
            ("bpm_max", y.bpm_max.to_string()),
            ("bpm_jitter", y.bpm_jitter.to_string()),
            ("amplitude_jitter", y.amplitude_jitter.to_string()),
            ("noise_std", y.noise_std.to_string()),
            ("baseline_wander", y.baseline_wander.to_string()),
        ]
    }

    /// Applies the lines of a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            self.set(k.trim(), v).map_err(err)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.preprocess.window_len != self.model.global_len || self.preprocess.beat_len != self.model.beat_len {
            return Err(Error::contract(format!(
                "preprocessing produces {}/{} samples, model expects {}/{}",
                self.preprocess.window_len, self.preprocess.beat_len, self.model.global_len, self.model.beat_len
            )));
        }
        if self.score.inference_draws == 0 {
            return Err(Error::contract("inference_draws must be at least 1"));
        }
        Ok(())
    }
}
