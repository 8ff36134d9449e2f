use crate::error::{Error, Result};

/// One fixed-length window centred on an R-peak.
#[derive(Debug, Clone, PartialEq)]
pub struct Heartbeat {
    pub samples: Vec<f64>,
    /// R-peak position in the parent signal.
    pub r_peak: usize,
    /// Start of the window in the parent signal.
    pub start: usize,
    /// 0-based order among the beats kept for the parent.
    pub index: usize,
}

/// Cuts `[r - d/2, r + d/2)` around every R-peak, dropping windows that
/// leave the signal.
pub fn segment_heartbeats(x: &[f64], rpeaks: &[usize], d: usize) -> Result<Vec<Heartbeat>> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::contract(format!("beat length must be even, got {d}")));
    }
    if d > x.len() {
        return Err(Error::contract(format!(
            "beat length {d} exceeds signal length {}",
            x.len()
        )));
    }
    let half = d / 2;
    let beats = rpeaks
        .iter()
        .filter(|&&r| r >= half && r + half <= x.len())
        .enumerate()
        .map(|(index, &r)| Heartbeat {
            samples: x[r - half..r + half].to_vec(),
            r_peak: r,
            start: r - half,
            index,
        })
        .collect();
    Ok(beats)
}

/// Smoothed first difference of a signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendSignal {
    pub values: Vec<f64>,
    pub smoothing_window: usize,
}

/// `diff[k] = x[k+1] - x[k]` (0 at the end), then a centred moving average
/// with edge replication.
pub fn extract_trend(x: &[f64], window: usize) -> Result<TrendSignal> {
    if window % 2 == 0 {
        return Err(Error::contract(format!("trend window must be odd, got {window}")));
    }
    if window > x.len() {
        return Err(Error::contract(format!(
            "trend window {window} exceeds signal length {}",
            x.len()
        )));
    }
    let n = x.len();
    let mut diff: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    diff.push(0.0);
    let half = (window / 2) as isize;
    let values = (0..n as isize)
        .map(|k| {
            (-half..=half)
                .map(|o| diff[(k + o).clamp(0, n as isize - 1) as usize])
                .sum::<f64>()
                / window as f64
        })
        .collect();
    Ok(TrendSignal {
        values,
        smoothing_window: window,
    })
}

/// `(x - mean) / max(std, 1e-8)` with the population standard deviation.
pub fn znormalize(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-8);
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// Linear-interpolation resampling from `fs_in` to `fs_out`.
pub fn resample_linear(x: &[f64], fs_in: f64, fs_out: f64) -> Vec<f64> {
    if x.len() < 2 || fs_in == fs_out {
        return x.to_vec();
    }
    let n_out = ((x.len() - 1) as f64 * fs_out / fs_in).floor() as usize + 1;
    (0..n_out)
        .map(|i| {
            let pos = i as f64 * fs_in / fs_out;
            let j = (pos.floor() as usize).min(x.len() - 2);
            let frac = pos - j as f64;
            x[j] * (1.0 - frac) + x[j + 1] * frac
        })
        .collect()
}

/// Nearest-sample resampling for label vectors.
pub fn resample_nearest<T: Copy>(x: &[T], fs_in: f64, fs_out: f64) -> Vec<T> {
    if x.len() < 2 || fs_in == fs_out {
        return x.to_vec();
    }
    let n_out = ((x.len() - 1) as f64 * fs_out / fs_in).floor() as usize + 1;
    (0..n_out)
        .map(|i| x[((i as f64 * fs_in / fs_out).round() as usize).min(x.len() - 1)])
        .collect()
}
