#![allow(dead_code)]

use mscr::scoring::{synth_ecg_detailed, SynthParams, DEFAULT_WAVES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Greedy one-to-one matching of detections to true peaks within `tol`
/// samples; returns (precision, recall).
pub fn match_peaks(truth: &[usize], found: &[usize], tol: usize) -> (f64, f64) {
    let mut used = vec![false; found.len()];
    let mut hits = 0;
    for &t in truth {
        let best = found
            .iter()
            .enumerate()
            .filter(|(i, &f)| !used[*i] && f.abs_diff(t) <= tol)
            .min_by_key(|(_, &f)| f.abs_diff(t));
        if let Some((i, _)) = best {
            used[i] = true;
            hits += 1;
        }
    }
    let precision = if found.is_empty() { 1.0 } else { hits as f64 / found.len() as f64 };
    let recall = if truth.is_empty() { 1.0 } else { hits as f64 / truth.len() as f64 };
    (precision, recall)
}

/// Peak absolute value over the middle half, away from filter transients.
pub fn interior_amplitude(x: &[f64]) -> f64 {
    let n = x.len();
    x[n / 4..3 * n / 4].iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn sine(freq: f64, fs: f64, seconds: f64) -> Vec<f64> {
    let n = (fs * seconds) as usize;
    (0..n)
        .map(|k| (2.0 * std::f64::consts::PI * freq * k as f64 / fs).sin())
        .collect()
}

/// R amplitude of the built-in wave set.
pub fn r_amplitude() -> f64 {
    DEFAULT_WAVES.iter().fold(0.0, |m, w| m.max(w.amplitude))
}

/// A 72 bpm, 30 s record at `fs` with its true R-peaks.
pub fn ecg_30s(fs: f64, noise_std: f64, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let p = SynthParams {
        fs,
        duration_s: 30.0,
        bpm: 72.0,
        noise_std,
        ..Default::default()
    };
    let s = synth_ecg_detailed(&p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (s.record.samples, s.r_peaks)
}
