//! Parameter-free R-peak detection with an adaptive threshold.
//!
//! Band-pass 5–15 Hz, differentiate, square, integrate over a centred
//! 150 ms window, then accept envelope maxima above half the running mean
//! of recent accepted peak heights. A 200 ms refractory period keeps only
//! the larger of two close candidates.

use super::filter::butterworth_bandpass;

const REFRACTORY_S: f64 = 0.2;
const INTEGRATION_S: f64 = 0.15;
const RECENT_PEAKS: usize = 8;
const THRESHOLD_FRACTION: f64 = 0.5;

/// Detection envelope: squared derivative of the QRS band, integrated.
pub fn detection_envelope(x: &[f64], fs: f64) -> Vec<f64> {
    let n = x.len();
    if n < 3 {
        return vec![0.0; n];
    }
    let hi = 15.0f64.min(0.45 * fs);
    let lo = 5.0f64.min(hi / 2.0);
    let band = butterworth_bandpass(x, fs, lo, hi, 2).unwrap_or_else(|_| x.to_vec());

    let mut sq = vec![0.0; n];
    for i in 0..n {
        let d = match i {
            0 => band[1] - band[0],
            i if i == n - 1 => band[n - 1] - band[n - 2],
            _ => (band[i + 1] - band[i - 1]) / 2.0,
        };
        sq[i] = d * d;
    }

    let half = ((INTEGRATION_S * fs).round() as usize / 2).max(1);
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + sq[i];
    }
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half + 1).min(n);
            (prefix[b] - prefix[a]) / (b - a) as f64
        })
        .collect()
}

/// Indices of detected R-peaks, strictly increasing.
pub fn detect_r_peaks(x: &[f64], fs: f64) -> Vec<usize> {
    if !(fs > 0.0) || (x.len() as f64) < 0.5 * fs || x.len() < 3 {
        return Vec::new();
    }
    let env = detection_envelope(x, fs);
    let n = env.len();
    let peak_level = env.iter().cloned().fold(0.0, f64::max);
    if peak_level <= f64::MIN_POSITIVE {
        return Vec::new();
    }

    let refractory = (REFRACTORY_S * fs).ceil() as usize;
    let warmup = ((2.0 * fs) as usize).clamp(1, n);
    let mut recent: Vec<f64> = vec![env[..warmup].iter().cloned().fold(0.0, f64::max)];
    let mut peaks: Vec<usize> = Vec::new();

    for i in 1..n - 1 {
        if !(env[i] > env[i - 1] && env[i] >= env[i + 1]) {
            continue;
        }
        let mean = recent.iter().sum::<f64>() / recent.len() as f64;
        if env[i] < THRESHOLD_FRACTION * mean {
            continue;
        }
        match peaks.last() {
            Some(&last) if i - last < refractory => {
                if env[i] > env[last] {
                    *peaks.last_mut().unwrap() = i;
                    *recent.last_mut().unwrap() = env[i];
                }
            }
            _ => {
                peaks.push(i);
                recent.push(env[i]);
                if recent.len() > RECENT_PEAKS {
                    recent.remove(0);
                }
            }
        }
    }
    peaks
}
