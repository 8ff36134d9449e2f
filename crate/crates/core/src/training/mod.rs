//! Restoration losses, the masked training loop and checkpoint files.

pub mod checkpoint;
pub mod loss;

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::autodiff::{cosine_lr, AdamWConfig, AdamWState, Graph, Tensor};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelInput, ModelParams};
use crate::rng::{derived_rng, Purpose};
use crate::signal::{make_global_mask, make_local_mask, EcgRecord, PreparedRecord, PreparedWindow, PreprocessConfig};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use loss::{item_loss, sse_node, total_loss, trend_loss, uncertainty_loss, uncertainty_loss_node, ItemLoss};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the heartbeat loss.
    pub alpha: f64,
    /// Weight of the trend loss.
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub mask_ratio_g: f64,
    pub mask_ratio_l: f64,
    /// Number of separate masked runs in the global mask.
    pub k_regions: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            epochs: 50,
            batch_size: 32,
            lr0: 1e-4,
            weight_decay: 1e-5,
            mask_ratio_g: 0.3,
            mask_ratio_l: 0.3,
            k_regions: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::contract(format!(
                "alpha and beta must be non-negative, got {} and {}",
                self.alpha, self.beta
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::contract("epochs and batch_size must be at least 1"));
        }
        if !(self.lr0 >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::contract("lr0 and weight_decay must be non-negative"));
        }
        for r in [self.mask_ratio_g, self.mask_ratio_l] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::contract(format!("mask ratio must be in [0, 1), got {r}")));
            }
        }
        if self.k_regions == 0 {
            return Err(Error::contract("k_regions must be at least 1"));
        }
        Ok(())
    }
}

/// Mean per-item losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochLosses {
    pub global: f64,
    pub local: f64,
    pub trend: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<EpochLosses>,
    pub checkpoint: Option<PathBuf>,
    pub wall_time_s: f64,
    /// Records or windows that could not be used.
    pub skipped: usize,
    pub windows: usize,
    pub steps: usize,
}

/// Windows usable for training: at least one complete heartbeat.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub windows: Vec<PreparedWindow>,
    pub skipped: usize,
}

pub fn prepare_training_set(records: &[EcgRecord], pre: &PreprocessConfig) -> Result<TrainingSet> {
    pre.validate()?;
    let prepared: Vec<Result<Vec<PreparedWindow>>> = records
        .par_iter()
        .map(|r| PreparedRecord::from_record(r, pre)?.windows(pre))
        .collect();
    let mut windows = Vec::new();
    let mut skipped = 0;
    for p in prepared {
        match p {
            Ok(ws) => {
                for w in ws {
                    if w.beats.is_empty() {
                        skipped += 1;
                    } else {
                        windows.push(w);
                    }
                }
            }
            Err(_) => skipped += 1,
        }
    }
    if windows.is_empty() {
        return Err(Error::contract(format!(
            "no usable training windows ({skipped} skipped)"
        )));
    }
    Ok(TrainingSet { windows, skipped })
}

struct ItemResult {
    grads: Vec<Tensor>,
    losses: [f64; 4],
}

fn train_item(
    params: &ModelParams,
    window: &PreparedWindow,
    cfg: &TrainConfig,
    stream: u64,
) -> Result<ItemResult> {
    let mut rng = derived_rng(cfg.seed, Purpose::TrainItem, stream);
    let beat = &window.beats[rng.gen_range(0..window.beats.len())];
    let mc = &params.config;
    let gmask = make_global_mask(mc.global_len, cfg.mask_ratio_g, cfg.k_regions, &mut rng)?;
    let lmask = make_local_mask(mc.beat_len, cfg.mask_ratio_l, &mut rng)?;
    let input = ModelInput {
        global: &window.signal,
        beat: &beat.samples,
        global_mask: &gmask,
        local_mask: &lmask,
        trend: &window.trend,
    };
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let loss = item_loss(&mut g, &bound, &input, cfg.alpha, cfg.beta)?;
    let mut grads = g.backward(loss.total)?;
    Ok(ItemResult {
        grads: bound.ids().iter().map(|&id| grads.take(id)).collect(),
        losses: loss.values(&g),
    })
}

pub fn train(
    records: &[EcgRecord],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    pre: &PreprocessConfig,
) -> Result<(ModelParams, TrainReport)> {
    train_with(records, cfg, model_cfg, pre, |_, _| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<F>(
    records: &[EcgRecord],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    pre: &PreprocessConfig,
    on_epoch: F,
) -> Result<(ModelParams, TrainReport)>
where
    F: FnMut(usize, &EpochLosses),
{
    if records.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    if pre.window_len != model_cfg.global_len || pre.beat_len != model_cfg.beat_len {
        return Err(Error::contract(format!(
            "preprocessing produces {}/{} samples, model expects {}/{}",
            pre.window_len, pre.beat_len, model_cfg.global_len, model_cfg.beat_len
        )));
    }
    let set = prepare_training_set(records, pre)?;
    let (params, mut report) = train_windows(&set.windows, cfg, model_cfg, on_epoch)?;
    report.skipped = set.skipped;
    Ok((params, report))
}

/// The optimisation loop proper: one random beat and fresh masks per
/// window per step, batch-mean loss, AdamW with a cosine schedule.
pub fn train_windows<F>(
    windows: &[PreparedWindow],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    mut on_epoch: F,
) -> Result<(ModelParams, TrainReport)>
where
    F: FnMut(usize, &EpochLosses),
{
    cfg.validate()?;
    if windows.is_empty() || windows.iter().any(|w| w.beats.is_empty()) {
        return Err(Error::contract("every training window needs at least one heartbeat"));
    }
    let start = Instant::now();
    let mut params = ModelParams::init(model_cfg)?;
    let mut opt = AdamWState::new(
        AdamWConfig {
            lr0: cfg.lr0,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
        &params.tensors().iter().collect::<Vec<_>>(),
    );
    let n = windows.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut step = 0usize;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut derived_rng(cfg.seed, Purpose::Shuffle, epoch as u64));
        let mut sums = [0.0; 4];
        for batch in order.chunks(cfg.batch_size) {
            let lr = cosine_lr(step, total_steps, cfg.lr0)?;
            let base = (step * cfg.batch_size) as u64;
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(j, &wi)| train_item(&params, &windows[wi], cfg, base + j as u64))
                .collect::<Result<Vec<_>>>()?;

            let scale = 1.0 / batch.len() as f64;
            let mut acc: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
            for r in &results {
                for (a, g) in acc.iter_mut().zip(&r.grads) {
                    a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                }
                for (s, v) in sums.iter_mut().zip(r.losses) {
                    *s += v;
                }
            }
            acc.iter_mut()
                .for_each(|a| a.data_mut().iter_mut().for_each(|x| *x *= scale));
            let mut refs: Vec<&mut Tensor> = params.tensors_mut().iter_mut().collect();
            opt.step(&mut refs, &acc, lr)?;
            step += 1;
        }
        let k = 1.0 / n as f64;
        let e = EpochLosses {
            global: sums[0] * k,
            local: sums[1] * k,
            trend: sums[2] * k,
            total: sums[3] * k,
        };
        on_epoch(epoch, &e);
        epoch_losses.push(e);
    }
    Ok((
        params,
        TrainReport {
            epoch_losses,
            checkpoint: None,
            wall_time_s: start.elapsed().as_secs_f64(),
            skipped: 0,
            windows: n,
            steps: step,
        },
    ))
}

/// Largest model that finite differences are run on.
pub const GRADCHECK_PARAM_CEILING: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Maximum relative error per parameter group, in layout order.
    pub groups: Vec<(String, f64)>,
    pub max_error: f64,
    pub parameters: usize,
}

/// Central-difference check of the full weighted loss with respect to
/// every parameter, at a jittered initialisation with a fixed synthetic
/// input and fixed masks.
pub fn check_model_gradients(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    eps: f64,
    corrupt: bool,
) -> Result<GradCheckReport> {
    let count = ModelParams::count_for(model_cfg)?;
    if count > GRADCHECK_PARAM_CEILING {
        return Err(Error::contract(format!(
            "model has {count} parameters; gradient checks are limited to {GRADCHECK_PARAM_CEILING}"
        )));
    }
    let mut params = ModelParams::init(model_cfg)?;
    let (dg, dl) = (model_cfg.global_len, model_cfg.beat_len);
    let mut rng = derived_rng(cfg.seed, Purpose::TrainItem, u64::MAX);
    // Zero biases on zeroed (masked) inputs sit exactly on the LeakyReLU kink.
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.05 * rng.gen_range(-1.0..1.0);
        }
    }
    let signal: Vec<f64> = (0..dg)
        .map(|k| {
            let t = k as f64;
            (t * 0.39).sin() + 0.4 * (t * 0.11 + 1.0).cos() + 0.1 * rng.gen_range(-1.0..1.0)
        })
        .collect();
    let start = dg / 2 - dl / 2;
    let beat = signal[start..start + dl].to_vec();
    let window = 5.min(dg - usize::from(dg % 2 == 0));
    let trend = crate::signal::extract_trend(&signal, window)?.values;
    let gmask = make_global_mask(dg, cfg.mask_ratio_g, cfg.k_regions.min(2), &mut rng)?;
    let lmask = make_local_mask(dl, cfg.mask_ratio_l, &mut rng)?;
    let input = ModelInput {
        global: &signal,
        beat: &beat,
        global_mask: &gmask,
        local_mask: &lmask,
        trend: &trend,
    };
    let errs = crate::autodiff::grad_check_many(
        |g, ids| {
            let bound = params.bind_ids(ids.to_vec())?;
            Ok(item_loss(g, &bound, &input, cfg.alpha, cfg.beta)?.total)
        },
        params.tensors(),
        eps,
        corrupt,
    )?;
    let mut groups: Vec<(String, f64)> = Vec::new();
    for (name, e) in params.names().iter().zip(&errs) {
        let group = ModelParams::group_of(name);
        match groups.last_mut() {
            Some((g, m)) if g == group => *m = m.max(*e),
            _ => groups.push((group.to_string(), *e)),
        }
    }
    Ok(GradCheckReport {
        max_error: errs.iter().cloned().fold(0.0, f64::max),
        groups,
        parameters: count,
    })
}
