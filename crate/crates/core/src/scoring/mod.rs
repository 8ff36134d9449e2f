//! Restoration-error anomaly scores and maps, metrics, and the synthetic
//! benchmark generator.

pub mod metrics;
pub mod synth;

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ModelInput, ModelParams};
use crate::rng::{derived_rng, Purpose};
use crate::signal::{
    make_global_mask, make_local_mask, EcgRecord, PreparedRecord, PreparedWindow, PreprocessConfig, RecordLabel,
};
use crate::training::TrainConfig;

pub use metrics::{best_f1, f1_at, reassemble, roc_auc, sliding_windows, Level, MetricReport, SignalWindow};
pub use synth::{
    synth_ecg, synth_ecg_detailed, AnomalyKind, AnomalySpec, SynthConfig, SynthDataset, SynthParams, SyntheticEcg,
    Wave, DEFAULT_WAVES,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreConfig {
    /// Independent mask draws per (window, beat) pair.
    pub inference_draws: usize,
    /// Divide each beat's local contribution by the number of beats.
    pub normalize_by_beats: bool,
    /// Divide each term by its standard deviation over the training set.
    pub term_scaling: bool,
    pub seed: u64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            inference_draws: 4,
            normalize_by_beats: false,
            term_scaling: false,
            seed: 0,
        }
    }
}

/// Multipliers applied to the global, local and trend terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermScale {
    pub global: f64,
    pub local: f64,
    pub trend: f64,
}

impl Default for TermScale {
    fn default() -> Self {
        Self {
            global: 1.0,
            local: 1.0,
            trend: 1.0,
        }
    }
}

/// Score of one global window.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyResult {
    pub score: f64,
    /// Per-point contributions; sums to `score`.
    pub point_map: Vec<f64>,
    /// Global, local and trend partial sums.
    pub term_breakdown: [f64; 3],
    /// One score per heartbeat: the map summed over its window.
    pub beat_scores: Vec<f64>,
    /// No heartbeat was found, so only the global and trend terms count.
    pub fallback: bool,
}

/// Aggregated score of a whole record.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordScore {
    pub id: String,
    /// Maximum over window scores.
    pub score: f64,
    /// Window maps averaged where windows overlap.
    pub point_map: Vec<f64>,
    /// Windows covering each point; uncovered points are never evaluated.
    pub coverage: Vec<usize>,
    pub term_breakdown: [f64; 3],
    pub beat_scores: Vec<f64>,
    pub beat_labels: Option<Vec<u8>>,
    pub record_label: Option<RecordLabel>,
    pub point_labels: Option<Vec<u8>>,
    pub fallback_windows: usize,
}

/// A frozen model plus everything needed to score records.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    pub params: &'a ModelParams,
    pub pre: &'a PreprocessConfig,
    pub mask_ratio_g: f64,
    pub mask_ratio_l: f64,
    pub k_regions: usize,
    pub config: ScoreConfig,
    pub scale: TermScale,
}

impl<'a> Scorer<'a> {
    pub fn new(params: &'a ModelParams, pre: &'a PreprocessConfig, train: &TrainConfig, config: ScoreConfig) -> Self {
        Self {
            params,
            pre,
            mask_ratio_g: train.mask_ratio_g,
            mask_ratio_l: train.mask_ratio_l,
            k_regions: train.k_regions,
            config,
            scale: TermScale::default(),
        }
    }

    /// Pairs every heartbeat with the window, restores under
    /// `inference_draws` mask draws and accumulates the three terms.
    pub fn anomaly_score(&self, w: &PreparedWindow) -> Result<AnomalyResult> {
        let mc = &self.params.config;
        let (dl, dg) = (mc.beat_len, mc.global_len);
        if w.signal.len() != dg || w.trend.len() != dg {
            return Err(Error::dim(format!(
                "window of length {} scored by a model for {dg}",
                w.signal.len()
            )));
        }
        if self.config.inference_draws == 0 {
            return Err(Error::contract("inference_draws must be at least 1"));
        }
        let fallback = w.beats.is_empty();
        let centre;
        let beats: Vec<(&[f64], usize)> = if fallback {
            let s = dg / 2 - dl / 2;
            centre = w.signal[s..s + dl].to_vec();
            vec![(&centre[..], s)]
        } else {
            w.beats.iter().map(|b| (&b.samples[..], b.start)).collect()
        };
        if beats.iter().any(|(b, _)| b.len() != dl) {
            return Err(Error::dim(format!("heartbeats must have length {dl}")));
        }

        let draws = self.config.inference_draws;
        let mut g_acc = vec![0.0; dg];
        let mut t_acc = vec![0.0; dg];
        let mut local: Vec<Vec<f64>> = vec![vec![0.0; dl]; beats.len()];
        for (m, (beat, _)) in beats.iter().enumerate() {
            for r in 0..draws {
                let mut rng = derived_rng(self.config.seed, Purpose::Scoring, (m * draws + r) as u64);
                let gmask = make_global_mask(dg, self.mask_ratio_g, self.k_regions, &mut rng)?;
                let lmask = make_local_mask(dl, self.mask_ratio_l, &mut rng)?;
                let out = self.params.restore(&ModelInput {
                    global: &w.signal,
                    beat,
                    global_mask: &gmask,
                    local_mask: &lmask,
                    trend: &w.trend,
                })?;
                for k in 0..dg {
                    let e = w.signal[k] - out.x_hat_g[k];
                    g_acc[k] += e * e / out.sigma_g[k];
                }
                if let Some(xt) = &out.x_hat_t {
                    for k in 0..dg {
                        let e = w.signal[k] - xt[k];
                        t_acc[k] += e * e;
                    }
                }
                for k in 0..dl {
                    let e = beat[k] - out.x_hat_l[k];
                    local[m][k] += e * e / out.sigma_l[k];
                }
            }
        }

        let pairs = (beats.len() * draws) as f64;
        let mut terms = [0.0; 3];
        let mut map = vec![0.0; dg];
        for k in 0..dg {
            let gk = g_acc[k] / pairs * self.scale.global;
            let tk = t_acc[k] / pairs * self.scale.trend;
            terms[0] += gk;
            terms[2] += tk;
            map[k] = gk + tk;
        }
        if !fallback {
            let per_beat = if self.config.normalize_by_beats {
                1.0 / beats.len() as f64
            } else {
                1.0
            };
            for (m, (_, start)) in beats.iter().enumerate() {
                for k in 0..dl {
                    let v = local[m][k] / draws as f64 * self.scale.local * per_beat;
                    terms[1] += v;
                    map[start + k] += v;
                }
            }
        }
        let beat_scores = w
            .beats
            .iter()
            .map(|b| map[b.start..b.start + dl].iter().sum())
            .collect();
        Ok(AnomalyResult {
            score: map.iter().sum(),
            point_map: map,
            term_breakdown: terms,
            beat_scores,
            fallback,
        })
    }

    /// The per-point map of one window.
    pub fn anomaly_map(&self, w: &PreparedWindow) -> Result<Vec<f64>> {
        Ok(self.anomaly_score(w)?.point_map)
    }

    /// Scores every window of a record: the record score is the window
    /// maximum and the map is the overlap average.
    pub fn score_record(&self, rec: &EcgRecord) -> Result<RecordScore> {
        let prepared = PreparedRecord::from_record(rec, self.pre)?;
        let windows = prepared.windows(self.pre)?;
        let mut parts = Vec::with_capacity(windows.len());
        let mut best: Option<(f64, [f64; 3])> = None;
        let mut beat_scores = Vec::new();
        let mut beat_labels = prepared.point_labels.as_ref().map(|_| Vec::new());
        let mut fallback_windows = 0;
        for w in &windows {
            let res = self.anomaly_score(w)?;
            if best.map_or(true, |(s, _)| res.score > s) {
                best = Some((res.score, res.term_breakdown));
            }
            fallback_windows += usize::from(res.fallback);
            beat_scores.extend_from_slice(&res.beat_scores);
            if let (Some(all), Some(l)) = (beat_labels.as_mut(), w.beat_labels()) {
                all.extend(l);
            }
            parts.push(SignalWindow {
                offset: w.offset,
                values: res.point_map,
            });
        }
        let (score, terms) = best.ok_or_else(|| Error::contract(format!("record {} has no windows", rec.id)))?;
        let (point_map, coverage) = reassemble(prepared.signal.len(), &parts)?;
        Ok(RecordScore {
            id: rec.id.clone(),
            score,
            point_map,
            coverage,
            term_breakdown: terms,
            beat_scores,
            beat_labels,
            record_label: prepared.record_label,
            point_labels: prepared.point_labels,
            fallback_windows,
        })
    }

    /// Scores records in parallel, preserving input order.
    pub fn score_records(&self, records: &[EcgRecord]) -> Result<Vec<RecordScore>> {
        records.par_iter().map(|r| self.score_record(r)).collect()
    }

    /// Reciprocal standard deviation of each term's window totals over
    /// normal training records.
    pub fn fit_term_scale(&self, train: &[EcgRecord]) -> Result<TermScale> {
        let unscaled = Scorer {
            scale: TermScale::default(),
            ..self.clone()
        };
        let scores = unscaled.score_records(train)?;
        if scores.len() < 2 {
            return Err(Error::contract("term scaling needs at least two training records"));
        }
        let inv_std = |i: usize| {
            let v: Vec<f64> = scores.iter().map(|s| s.term_breakdown[i]).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
            1.0 / var.sqrt().max(1e-12)
        };
        Ok(TermScale {
            global: inv_std(0),
            local: inv_std(1),
            trend: if self.params.config.trend_module { inv_std(2) } else { 1.0 },
        })
    }
}

/// Mean over per-lead results of the same recording.
pub fn aggregate_leads(leads: &[RecordScore]) -> Result<RecordScore> {
    let first = leads.first().ok_or_else(|| Error::contract("no leads to aggregate"))?;
    if leads.iter().any(|l| l.point_map.len() != first.point_map.len()) {
        return Err(Error::dim("leads have different lengths"));
    }
    let k = 1.0 / leads.len() as f64;
    let mut out = first.clone();
    out.score = leads.iter().map(|l| l.score).sum::<f64>() * k;
    for (i, v) in out.point_map.iter_mut().enumerate() {
        *v = leads.iter().map(|l| l.point_map[i]).sum::<f64>() * k;
    }
    for t in 0..3 {
        out.term_breakdown[t] = leads.iter().map(|l| l.term_breakdown[t]).sum::<f64>() * k;
    }
    if leads.iter().all(|l| l.beat_scores.len() == first.beat_scores.len()) {
        for (i, v) in out.beat_scores.iter_mut().enumerate() {
            *v = leads.iter().map(|l| l.beat_scores[i]).sum::<f64>() * k;
        }
    }
    out.fallback_windows = leads.iter().map(|l| l.fallback_windows).max().unwrap_or(0);
    Ok(out)
}

/// AUC (and best F1 at heartbeat level) over scored records.
pub fn evaluate(results: &[RecordScore], level: Level) -> Result<MetricReport> {
    let (scores, labels): (Vec<f64>, Vec<u8>) = match level {
        Level::Patient => {
            let mut s = Vec::new();
            let mut l = Vec::new();
            for r in results {
                let lab = r.record_label.ok_or_else(|| {
                    Error::contract(format!("record {} has no record label (`label=` line)", r.id))
                })?;
                s.push(r.score);
                l.push(lab.as_int());
            }
            (s, l)
        }
        Level::Heartbeat => {
            let mut s = Vec::new();
            let mut l = Vec::new();
            for r in results {
                let bl = r.beat_labels.as_ref().ok_or_else(|| {
                    Error::contract(format!(
                        "record {} has no point labels (`point_labels=` line) to derive heartbeat labels",
                        r.id
                    ))
                })?;
                s.extend_from_slice(&r.beat_scores);
                l.extend_from_slice(bl);
            }
            (s, l)
        }
        Level::SignalPoint => {
            let mut s = Vec::new();
            let mut l = Vec::new();
            for r in results {
                let pl = r.point_labels.as_ref().ok_or_else(|| {
                    Error::contract(format!("record {} has no point labels (`point_labels=` line)", r.id))
                })?;
                for ((v, &lab), &c) in r.point_map.iter().zip(pl).zip(&r.coverage) {
                    if c > 0 {
                        s.push(*v);
                        l.push(lab);
                    }
                }
            }
            (s, l)
        }
    };
    let auc = roc_auc(&scores, &labels)?;
    let (f1, threshold) = if level == Level::Heartbeat {
        let (f, t) = best_f1(&scores, &labels)?;
        (Some(f), Some(t))
    } else {
        (None, None)
    };
    let positives = labels.iter().filter(|&&l| l != 0).count();
    Ok(MetricReport {
        level,
        auc,
        f1,
        threshold,
        positives,
        negatives: labels.len() - positives,
    })
}

/// `index,score[,label]` rows with a header line.
pub fn map_csv(r: &RecordScore) -> String {
    let mut out = String::new();
    match &r.point_labels {
        Some(pl) => {
            out.push_str("index,score,label\n");
            for (i, (v, l)) in r.point_map.iter().zip(pl).enumerate() {
                writeln!(out, "{i},{v},{l}").unwrap();
            }
        }
        None => {
            out.push_str("index,score\n");
            for (i, v) in r.point_map.iter().enumerate() {
                writeln!(out, "{i},{v}").unwrap();
            }
        }
    }
    out
}
