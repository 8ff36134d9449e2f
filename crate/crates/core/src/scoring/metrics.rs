use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    Patient,
    Heartbeat,
    SignalPoint,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Patient, Level::Heartbeat, Level::SignalPoint];

    pub fn name(self) -> &'static str {
        match self {
            Level::Patient => "patient",
            Level::Heartbeat => "heartbeat",
            Level::SignalPoint => "signal_point",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Level::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown level `{s}` (patient, heartbeat, signal_point)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub level: Level,
    pub auc: f64,
    pub f1: Option<f64>,
    pub threshold: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

impl MetricReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "level={} auc={:.6} positives={} negatives={}",
            self.level, self.auc, self.positives, self.negatives
        );
        if let (Some(f1), Some(t)) = (self.f1, self.threshold) {
            s.push_str(&format!(" f1={f1:.6} threshold={t}"));
        }
        s
    }

    /// `level,metric,value` rows without a header.
    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = vec![
            format!("{},auc,{}", self.level, self.auc),
            format!("{},positives,{}", self.level, self.positives),
            format!("{},negatives,{}", self.level, self.negatives),
        ];
        if let Some(f1) = self.f1 {
            rows.push(format!("{},f1,{f1}", self.level));
        }
        if let Some(t) = self.threshold {
            rows.push(format!("{},threshold,{t}", self.level));
        }
        rows
    }
}

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} scores against {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("score {s} is NaN")));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::contract(format!(
            "both classes are required, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Mann–Whitney AUC: `(concordant + ties/2) / (pos · neg)`, via mid-ranks.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the positive rank sum keeps mid-ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, mid-rank (i + j + 2) / 2
        let twice_mid = (i + j + 2) as u128;
        let p = idx[i..=j].iter().filter(|&&k| labels[k] != 0).count() as u128;
        twice_rank_sum += p * twice_mid;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    // 2U = 2R − P(P+1); AUC = U / (P·N)
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok((twice_u as f64 / 2.0) / (p * n) as f64)
}

/// Best F1 over thresholds `{min − 1} ∪ midpoints of sorted unique scores`,
/// predicting positive when `score > threshold`; ties go to the lower
/// threshold. Returns `(f1, threshold)`.
pub fn best_f1(scores: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    let (pos, _) = class_counts(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Start with everything predicted positive.
    let mut tp = pos;
    let mut fp = scores.len() - pos;
    let f1 = |tp: usize, fp: usize| {
        let fneg = pos - tp;
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };
    let mut best = (f1(tp, fp), scores[idx[0]] - 1.0);
    let mut i = 0;
    while i < idx.len() {
        let v = scores[idx[i]];
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == v {
            if labels[idx[j]] != 0 {
                tp -= 1;
            } else {
                fp -= 1;
            }
            j += 1;
        }
        if j == idx.len() {
            break;
        }
        let t = (v + scores[idx[j]]) / 2.0;
        let f = f1(tp, fp);
        if f > best.0 {
            best = (f, t);
        }
        i = j;
    }
    Ok(best)
}

/// F1 of the rule `score > threshold`.
pub fn f1_at(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    let (pos, _) = class_counts(scores, labels)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    for (s, &l) in scores.iter().zip(labels) {
        if *s > threshold {
            if l != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let fneg = pos - tp;
    Ok(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64)
}

/// Window with its offset in the source signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    pub offset: usize,
    pub values: Vec<f64>,
}

pub fn sliding_windows(x: &[f64], win: usize, stride: usize) -> Result<Vec<SignalWindow>> {
    Ok(crate::signal::sliding_offsets(x.len(), win, stride)?
        .into_iter()
        .map(|offset| SignalWindow {
            offset,
            values: x[offset..offset + win].to_vec(),
        })
        .collect())
}

/// Averages overlapping per-window maps back onto a length-`len` signal.
/// Returns the map and the number of windows covering each point.
pub fn reassemble(len: usize, windows: &[SignalWindow]) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut sum = vec![0.0; len];
    let mut cover = vec![0usize; len];
    for w in windows {
        if w.offset + w.values.len() > len {
            return Err(Error::dim(format!(
                "window at {} of length {} exceeds {len}",
                w.offset,
                w.values.len()
            )));
        }
        for (k, v) in w.values.iter().enumerate() {
            sum[w.offset + k] += v;
            cover[w.offset + k] += 1;
        }
    }
    for (s, &c) in sum.iter_mut().zip(&cover) {
        if c > 0 {
            *s /= c as f64;
        }
    }
    Ok((sum, cover))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[1.0, 2.0, 3.0, 4.0], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[5.0; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[3.0, 1.0, 2.0, 4.0], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert!(roc_auc(&[1.0, 2.0], &[1, 1]).is_err());
        assert!(roc_auc(&[1.0, 2.0], &[1]).is_err());
    }

    #[test]
    fn f1_examples() {
        assert_eq!(best_f1(&[1.0, 2.0, 3.0], &[0, 1, 1]).unwrap(), (1.0, 1.5));
        let (f, _) = best_f1(&[0.1, 0.2, 0.9, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(f, 1.0);
        // all tied: only the all-positive rule exists
        let (f, t) = best_f1(&[1.0, 1.0, 1.0, 1.0], &[0, 1, 0, 1]).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(t, 0.0);
        assert!(best_f1(&[1.0], &[0]).is_err());
    }

    #[test]
    fn windows_and_reassembly() {
        let x: Vec<f64> = (0..640).map(|i| i as f64).collect();
        let ws = sliding_windows(&x, 320, 160).unwrap();
        assert_eq!(ws.iter().map(|w| w.offset).collect::<Vec<_>>(), vec![0, 160, 320]);
        assert_eq!(sliding_windows(&x[..320], 320, 40).unwrap().len(), 1);
        assert!(sliding_windows(&x[..100], 320, 40).is_err());

        let consts: Vec<SignalWindow> = ws
            .iter()
            .map(|w| SignalWindow { offset: w.offset, values: vec![2.5; 320] })
            .collect();
        let (m, c) = reassemble(640, &consts).unwrap();
        assert!(m.iter().all(|&v| v == 2.5));
        assert_eq!(c[200], 2);
    }
}
