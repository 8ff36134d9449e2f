//! Synthetic single-lead ECG built from Gaussian P, Q, R, S and T bumps,
//! with optional injected anomalies and exact labels.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::signal::{EcgRecord, RecordLabel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    /// Centre relative to the R-peak, seconds.
    pub offset_s: f64,
    pub amplitude: f64,
    pub width_s: f64,
}

impl Wave {
    fn at(&self, dt: f64) -> f64 {
        let z = (dt - self.offset_s) / self.width_s;
        self.amplitude * (-0.5 * z * z).exp()
    }
}

/// Half-width of a wave's labelled support, in standard deviations.
const SUPPORT_WIDTHS: f64 = 4.0;

/// P, Q, R, S, T in that order.
pub const DEFAULT_WAVES: [Wave; 5] = [
    Wave { offset_s: -0.2, amplitude: 0.15, width_s: 0.025 },
    Wave { offset_s: -0.03, amplitude: -0.1, width_s: 0.01 },
    Wave { offset_s: 0.0, amplitude: 1.0, width_s: 0.012 },
    Wave { offset_s: 0.03, amplitude: -0.2, width_s: 0.01 },
    Wave { offset_s: 0.3, amplitude: 0.3, width_s: 0.05 },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnomalyKind {
    DropoutBeat,
    PrematureBeat,
    StShift,
    WidenedQrs,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 4] = [
        AnomalyKind::DropoutBeat,
        AnomalyKind::PrematureBeat,
        AnomalyKind::StShift,
        AnomalyKind::WidenedQrs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnomalyKind::DropoutBeat => "dropout_beat",
            AnomalyKind::PrematureBeat => "premature_beat",
            AnomalyKind::StShift => "st_shift",
            AnomalyKind::WidenedQrs => "widened_qrs",
        }
    }

    /// Magnitude used when none is given: premature-beat amplitude,
    /// ST offset, or QRS width factor. Unused for dropouts.
    pub fn default_magnitude(self) -> f64 {
        match self {
            AnomalyKind::DropoutBeat => 1.0,
            AnomalyKind::PrematureBeat => 1.0,
            AnomalyKind::StShift => 0.3,
            AnomalyKind::WidenedQrs => 2.5,
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnomalyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown anomaly type `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    /// Index of the affected beat in the schedule.
    pub beat: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub fs: f64,
    pub duration_s: f64,
    pub bpm: f64,
    /// Relative standard deviation of each RR interval.
    pub bpm_jitter: f64,
    /// Overall amplitude multiplier.
    pub amplitude: f64,
    pub waves: [Wave; 5],
    pub noise_std: f64,
    /// Amplitude of a slow sinusoidal baseline drift.
    pub baseline_wander: f64,
    /// Time of the first R-peak, seconds.
    pub first_beat_s: f64,
    pub anomaly: Option<AnomalySpec>,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            fs: 100.0,
            duration_s: 5.12,
            bpm: 72.0,
            bpm_jitter: 0.03,
            amplitude: 1.0,
            waves: DEFAULT_WAVES,
            noise_std: 0.0,
            baseline_wander: 0.0,
            first_beat_s: 0.3,
            anomaly: None,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if !(30.0..=200.0).contains(&self.bpm) {
            return Err(Error::contract(format!("bpm must be in [30, 200], got {}", self.bpm)));
        }
        if !(self.noise_std >= 0.0) || !(self.bpm_jitter >= 0.0) || !(self.baseline_wander >= 0.0) {
            return Err(Error::contract("noise_std, bpm_jitter and baseline_wander must be non-negative"));
        }
        if !(self.fs > 0.0) || !(self.duration_s > 0.0) || (self.fs * self.duration_s).round() < 2.0 {
            return Err(Error::contract("fs and duration_s must give at least two samples"));
        }
        if self.waves.iter().any(|w| !(w.width_s > 0.0)) {
            return Err(Error::contract("wave widths must be positive"));
        }
        Ok(())
    }
}

/// A generated record with its ground-truth R-peak sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEcg {
    pub record: EcgRecord,
    /// R-peaks of all beats inside the record, including an inserted one.
    pub r_peaks: Vec<usize>,
}

struct Beat {
    t: f64,
    waves: [Wave; 5],
    /// Added ST-segment offset: (start, end, level).
    st: Option<(f64, f64, f64)>,
}

fn support(waves: &[Wave; 5]) -> (f64, f64) {
    waves
        .iter()
        .filter(|w| w.amplitude != 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), w| {
            (a.min(w.offset_s - SUPPORT_WIDTHS * w.width_s), b.max(w.offset_s + SUPPORT_WIDTHS * w.width_s))
        })
}

fn smooth_step(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    0.5 - 0.5 * (PI * x).cos()
}

/// Beat schedule: times on the sample grid, spanning one second beyond
/// each edge so boundary beats are partially visible.
fn schedule<R: Rng + ?Sized>(p: &SynthParams, rng: &mut R) -> Vec<f64> {
    let rr = 60.0 / p.bpm;
    let jitter = Normal::new(0.0, p.bpm_jitter.max(0.0)).expect("finite std");
    let snap = |t: f64| (t * p.fs).round() / p.fs;
    let mut times = Vec::new();
    let mut t = p.first_beat_s;
    while t > -1.0 {
        t -= rr;
    }
    while t < p.duration_s + 1.0 {
        times.push(snap(t));
        let step = rr * (1.0 + jitter.sample(rng)).clamp(0.7, 1.3);
        t += step;
    }
    times
}

/// Generates one record; see [`synth_ecg_detailed`].
pub fn synth_ecg<R: Rng + ?Sized>(p: &SynthParams, rng: &mut R) -> Result<EcgRecord> {
    Ok(synth_ecg_detailed(p, rng)?.record)
}

/// Sum of per-beat Gaussian bumps, baseline drift and white noise.
/// An anomaly marks its perturbed interval in `point_labels` and sets the
/// record label to abnormal; otherwise labels are all zero.
pub fn synth_ecg_detailed<R: Rng + ?Sized>(p: &SynthParams, rng: &mut R) -> Result<SyntheticEcg> {
    p.validate()?;
    let n = (p.fs * p.duration_s).round() as usize;
    let times = schedule(p, rng);
    let mut beats: Vec<Beat> = times
        .iter()
        .map(|&t| Beat { t, waves: p.waves, st: None })
        .collect();

    let mut labelled: Option<(f64, f64)> = None;
    if let Some(a) = p.anomaly {
        if a.beat + 1 >= beats.len() {
            return Err(Error::contract(format!(
                "anomaly beat {} outside the schedule of {} beats",
                a.beat,
                beats.len()
            )));
        }
        let t = beats[a.beat].t;
        match a.kind {
            AnomalyKind::DropoutBeat => {
                let (lo, hi) = support(&beats[a.beat].waves);
                labelled = Some((t + lo, t + hi));
                beats.remove(a.beat);
            }
            AnomalyKind::PrematureBeat => {
                let next = beats[a.beat + 1].t;
                let tp = ((t + 0.55 * (next - t)) * p.fs).round() / p.fs;
                let mut w = p.waves;
                w[0].amplitude = 0.0;
                for q in &mut w[1..4] {
                    q.width_s *= 1.8;
                }
                w[2].amplitude *= a.magnitude;
                w[4].amplitude = -w[4].amplitude;
                let (lo, hi) = support(&w);
                labelled = Some((tp + lo, tp + hi));
                beats.insert(a.beat + 1, Beat { t: tp, waves: w, st: None });
            }
            AnomalyKind::StShift => {
                let (s, e) = (t + 0.05, t + 0.35);
                beats[a.beat].st = Some((s, e, a.magnitude));
                labelled = Some((s, e));
            }
            AnomalyKind::WidenedQrs => {
                let w = &mut beats[a.beat].waves;
                for q in &mut w[1..4] {
                    q.width_s *= a.magnitude;
                }
                let qrs = [w[1], w[2], w[3]];
                let lo = qrs.iter().map(|q| q.offset_s - SUPPORT_WIDTHS * q.width_s).fold(f64::INFINITY, f64::min);
                let hi = qrs.iter().map(|q| q.offset_s + SUPPORT_WIDTHS * q.width_s).fold(f64::NEG_INFINITY, f64::max);
                labelled = Some((t + lo, t + hi));
            }
        }
    }

    let noise = Normal::new(0.0, p.noise_std).expect("finite std");
    let wander_hz = 0.15 + 0.1 * rng.gen::<f64>();
    let wander_phase = 2.0 * PI * rng.gen::<f64>();
    let mut samples = vec![0.0; n];
    for (i, s) in samples.iter_mut().enumerate() {
        let t = i as f64 / p.fs;
        let mut v = 0.0;
        for b in &beats {
            let dt = t - b.t;
            if !(-0.6..=0.8).contains(&dt) {
                continue;
            }
            v += b.waves.iter().map(|w| w.at(dt)).sum::<f64>();
            if let Some((s0, s1, level)) = b.st {
                let ramp = 0.03;
                v += level * smooth_step((t - s0) / ramp) * smooth_step((s1 - t) / ramp);
            }
        }
        v *= p.amplitude;
        v += p.baseline_wander * (2.0 * PI * wander_hz * t + wander_phase).sin();
        if p.noise_std > 0.0 {
            v += noise.sample(rng);
        }
        *s = v;
    }

    let mut point_labels = vec![0u8; n];
    if let Some((lo, hi)) = labelled {
        let a = (lo * p.fs).ceil().max(0.0) as usize;
        let b = ((hi * p.fs).floor() as isize).min(n as isize - 1);
        if b >= 0 {
            for l in point_labels.iter_mut().take(b as usize + 1).skip(a) {
                *l = 1;
            }
        }
    }
    let r_peaks = beats
        .iter()
        .filter(|b| b.waves[2].amplitude != 0.0)
        .map(|b| (b.t * p.fs).round())
        .filter(|&i| i >= 0.0 && (i as usize) < n)
        .map(|i| i as usize)
        .collect();

    let mut record = EcgRecord::new("synthetic", samples, p.fs)?;
    record.record_label = Some(if p.anomaly.is_some() {
        RecordLabel::Abnormal
    } else {
        RecordLabel::Normal
    });
    record.point_labels = Some(point_labels);
    Ok(SyntheticEcg { record, r_peaks })
}

/// Dataset-level generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test_normal: usize,
    pub n_test_abnormal: usize,
    pub fs: f64,
    pub duration_s: f64,
    pub bpm_min: f64,
    pub bpm_max: f64,
    pub bpm_jitter: f64,
    /// Records draw an amplitude in `1 ± amplitude_jitter`.
    pub amplitude_jitter: f64,
    pub noise_std: f64,
    pub baseline_wander: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 256,
            n_test_normal: 64,
            n_test_abnormal: 64,
            fs: 100.0,
            duration_s: 5.12,
            bpm_min: 60.0,
            bpm_max: 80.0,
            bpm_jitter: 0.03,
            amplitude_jitter: 0.1,
            noise_std: 0.02,
            baseline_wander: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub train: Vec<EcgRecord>,
    pub test: Vec<EcgRecord>,
    /// Anomaly type of each abnormal test record, by id.
    pub anomaly_kinds: Vec<(String, AnomalyKind)>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train + self.n_test_normal + self.n_test_abnormal == 0 {
            return Err(Error::contract("synthetic dataset would contain no records"));
        }
        if !(self.bpm_min <= self.bpm_max) {
            return Err(Error::contract("bpm_min must not exceed bpm_max"));
        }
        if !(0.0..1.0).contains(&self.amplitude_jitter) {
            return Err(Error::contract("amplitude_jitter must be in [0, 1)"));
        }
        Ok(())
    }

    fn params<R: Rng + ?Sized>(&self, rng: &mut R) -> SynthParams {
        let rr = 60.0 / self.bpm_max;
        SynthParams {
            fs: self.fs,
            duration_s: self.duration_s,
            bpm: rng.gen_range(self.bpm_min..=self.bpm_max),
            bpm_jitter: self.bpm_jitter,
            amplitude: 1.0 + self.amplitude_jitter * rng.gen_range(-1.0..=1.0),
            waves: DEFAULT_WAVES,
            noise_std: self.noise_std,
            baseline_wander: self.baseline_wander,
            first_beat_s: rng.gen_range(0.0..rr),
            anomaly: None,
        }
    }

    /// Train records are all normal; abnormal test records cycle through
    /// the anomaly types so each type is equally represented.
    pub fn generate(&self) -> Result<SynthDataset> {
        use crate::rng::{derived_rng, Purpose};
        self.validate()?;
        let make = |index: u64, id: String, kind: Option<AnomalyKind>| -> Result<EcgRecord> {
            let mut rng = derived_rng(self.seed, Purpose::Synth, index);
            let mut p = self.params(&mut rng);
            if let Some(kind) = kind {
                // Pick a beat well inside the record so its window survives segmentation.
                let probe = schedule(&p, &mut rng.clone());
                let mut pick = derived_rng(!self.seed, Purpose::Synth, index);
                let inner: Vec<usize> = probe
                    .iter()
                    .enumerate()
                    .filter(|(_, &t)| t >= 1.0 && t <= p.duration_s - 1.2)
                    .map(|(i, _)| i)
                    .collect();
                if inner.is_empty() {
                    return Err(Error::contract(format!(
                        "duration {} s is too short to place an anomaly",
                        p.duration_s
                    )));
                }
                let beat = inner[pick.gen_range(0..inner.len())];
                p.anomaly = Some(AnomalySpec {
                    kind,
                    beat,
                    magnitude: kind.default_magnitude(),
                });
            }
            let mut r = synth_ecg(&p, &mut rng)?;
            r.id = id;
            Ok(r)
        };
        let mut train = Vec::with_capacity(self.n_train);
        for i in 0..self.n_train {
            train.push(make(i as u64, format!("n{i:04}"), None)?);
        }
        let base = self.n_train as u64;
        let mut test = Vec::with_capacity(self.n_test_normal + self.n_test_abnormal);
        for i in 0..self.n_test_normal {
            test.push(make(base + i as u64, format!("n{i:04}"), None)?);
        }
        let base = base + self.n_test_normal as u64;
        let mut kinds = Vec::new();
        for i in 0..self.n_test_abnormal {
            let kind = AnomalyKind::ALL[i % AnomalyKind::ALL.len()];
            let id = format!("a{i:04}");
            test.push(make(base + i as u64, id.clone(), Some(kind))?);
            kinds.push((id, kind));
        }
        Ok(SynthDataset {
            train,
            test,
            anomaly_kinds: kinds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noise_free_peaks_follow_schedule() {
        let p = SynthParams { bpm_jitter: 0.0, duration_s: 10.0, ..Default::default() };
        let s = synth_ecg_detailed(&p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = &s.record.samples;
        for &r in &s.r_peaks {
            if r > 0 && r + 1 < x.len() {
                assert!(x[r] > x[r - 1] && x[r] > x[r + 1]);
            }
        }
        let rr = (s.r_peaks[2] - s.r_peaks[1]) as f64 / p.fs;
        assert!((rr - 60.0 / 72.0).abs() <= 1.0 / p.fs);
        assert!(s.record.point_labels.as_ref().unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn premature_beat_labels_cover_inserted_support() {
        let base = SynthParams { duration_s: 8.0, ..Default::default() };
        let p = SynthParams {
            anomaly: Some(AnomalySpec { kind: AnomalyKind::PrematureBeat, beat: 4, magnitude: 1.0 }),
            ..base.clone()
        };
        let normal = synth_ecg_detailed(&base, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let s = synth_ecg_detailed(&p, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(s.r_peaks.len(), normal.r_peaks.len() + 1);
        let labels = s.record.point_labels.unwrap();
        // where the two records differ beyond float noise, labels are set
        for (i, (a, b)) in s.record.samples.iter().zip(&normal.record.samples).enumerate() {
            if (a - b).abs() > 1e-3 {
                assert_eq!(labels[i], 1, "sample {i}");
            }
        }
        let run: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
        assert!(!run.is_empty());
        assert_eq!(run.len(), run.last().unwrap() - run[0] + 1);
        assert_eq!(s.record.record_label, Some(RecordLabel::Abnormal));
    }

    #[test]
    fn dataset_counts_and_balance() {
        let cfg = SynthConfig {
            n_train: 3,
            n_test_normal: 2,
            n_test_abnormal: 8,
            ..Default::default()
        };
        let d = cfg.generate().unwrap();
        assert_eq!(d.train.len(), 3);
        assert_eq!(d.test.len(), 10);
        for k in AnomalyKind::ALL {
            assert_eq!(d.anomaly_kinds.iter().filter(|(_, x)| *x == k).count(), 2);
        }
        assert_eq!(d, cfg.generate().unwrap());
        for r in d.test.iter().filter(|r| r.record_label == Some(RecordLabel::Abnormal)) {
            assert!(r.point_labels.as_ref().unwrap().iter().any(|&l| l == 1), "{}", r.id);
        }
    }
}
