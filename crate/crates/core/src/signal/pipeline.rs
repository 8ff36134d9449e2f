//! Record-level preprocessing: filter at the native rate, resample, detect
//! R-peaks, then cut fixed-length windows with their heartbeats and trend.

use crate::error::{Error, Result};

use super::beats::{extract_trend, resample_linear, resample_nearest, segment_heartbeats, znormalize, Heartbeat};
use super::filter::{butterworth_bandpass, notch_filter};
use super::record::{EcgRecord, RecordLabel};
use super::rpeak::detect_r_peaks;

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub target_fs: f64,
    pub bandpass_lo_hz: f64,
    pub bandpass_hi_hz: f64,
    pub bandpass_order: usize,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub trend_window: usize,
    /// Global window length in samples at `target_fs`.
    pub window_len: usize,
    /// Offset between consecutive windows of a long record.
    pub window_stride: usize,
    /// Heartbeat length in samples at `target_fs`.
    pub beat_len: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_fs: 100.0,
            bandpass_lo_hz: 0.5,
            bandpass_hi_hz: 40.0,
            bandpass_order: 4,
            notch_hz: 50.0,
            notch_q: 30.0,
            trend_window: 9,
            window_len: 512,
            window_stride: 512,
            beat_len: 96,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_fs > 0.0) {
            return Err(Error::contract(format!("target_fs must be positive, got {}", self.target_fs)));
        }
        if self.window_len == 0 || self.window_stride == 0 {
            return Err(Error::contract("window_len and window_stride must be positive"));
        }
        if self.beat_len == 0 || self.beat_len % 2 != 0 || self.beat_len > self.window_len {
            return Err(Error::contract(format!(
                "beat_len must be even and at most window_len, got {} (window {})",
                self.beat_len, self.window_len
            )));
        }
        if self.trend_window % 2 == 0 || self.trend_window > self.window_len {
            return Err(Error::contract(format!(
                "trend_window must be odd and at most window_len, got {}",
                self.trend_window
            )));
        }
        Ok(())
    }
}

/// A filtered, resampled record with its detected R-peaks.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecord {
    pub id: String,
    pub signal: Vec<f64>,
    pub rpeaks: Vec<usize>,
    pub record_label: Option<RecordLabel>,
    pub point_labels: Option<Vec<u8>>,
    /// The notch was skipped because its frequency is at or above Nyquist.
    pub notch_skipped: bool,
}

/// One model-ready global window.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedWindow {
    pub offset: usize,
    pub signal: Vec<f64>,
    pub trend: Vec<f64>,
    /// Beats cut from `signal`; `start` and `r_peak` are window-relative.
    pub beats: Vec<Heartbeat>,
    pub point_labels: Option<Vec<u8>>,
}

impl PreparedWindow {
    /// A beat is abnormal when any labelled point lies in the central half
    /// of its window.
    pub fn beat_labels(&self) -> Option<Vec<u8>> {
        let labels = self.point_labels.as_ref()?;
        Some(
            self.beats
                .iter()
                .map(|b| {
                    let d = b.samples.len();
                    let (a, z) = (b.start + d / 4, b.start + d - d / 4);
                    u8::from(labels[a..z].iter().any(|&l| l != 0))
                })
                .collect(),
        )
    }
}

/// Window offsets `0, stride, 2·stride, …` with `offset + win <= len`.
pub fn sliding_offsets(len: usize, win: usize, stride: usize) -> Result<Vec<usize>> {
    if win == 0 || stride == 0 {
        return Err(Error::contract("window and stride must be positive"));
    }
    if win > len {
        return Err(Error::contract(format!("window {win} exceeds signal length {len}")));
    }
    Ok((0..=(len - win)).step_by(stride).collect())
}

impl PreparedRecord {
    pub fn from_record(rec: &EcgRecord, cfg: &PreprocessConfig) -> Result<Self> {
        rec.validate()?;
        cfg.validate()?;
        let fs = rec.sampling_rate_hz;
        let mut x = butterworth_bandpass(
            &rec.samples,
            fs,
            cfg.bandpass_lo_hz,
            cfg.bandpass_hi_hz,
            cfg.bandpass_order,
        )?;
        let notch_skipped = cfg.notch_hz >= fs / 2.0;
        if !notch_skipped {
            x = notch_filter(&x, fs, cfg.notch_hz, cfg.notch_q)?;
        }
        let signal = resample_linear(&x, fs, cfg.target_fs);
        let point_labels = rec
            .point_labels
            .as_ref()
            .map(|p| resample_nearest(p, fs, cfg.target_fs));
        let rpeaks = detect_r_peaks(&signal, cfg.target_fs);
        Ok(Self {
            id: rec.id.clone(),
            signal,
            rpeaks,
            record_label: rec.record_label,
            point_labels,
            notch_skipped,
        })
    }

    pub fn window_offsets(&self, cfg: &PreprocessConfig) -> Result<Vec<usize>> {
        sliding_offsets(self.signal.len(), cfg.window_len, cfg.window_stride)
    }

    /// Normalises the window at `offset` and segments its beats.
    pub fn window(&self, offset: usize, cfg: &PreprocessConfig) -> Result<PreparedWindow> {
        let end = offset + cfg.window_len;
        if end > self.signal.len() {
            return Err(Error::contract(format!(
                "window [{offset}, {end}) exceeds record {} of length {}",
                self.id,
                self.signal.len()
            )));
        }
        let signal = znormalize(&self.signal[offset..end]);
        let trend = extract_trend(&signal, cfg.trend_window)?.values;
        let local_peaks: Vec<usize> = self
            .rpeaks
            .iter()
            .filter(|&&r| r >= offset && r < end)
            .map(|&r| r - offset)
            .collect();
        let beats = segment_heartbeats(&signal, &local_peaks, cfg.beat_len)?;
        let point_labels = self.point_labels.as_ref().map(|p| p[offset..end].to_vec());
        Ok(PreparedWindow {
            offset,
            signal,
            trend,
            beats,
            point_labels,
        })
    }

    pub fn windows(&self, cfg: &PreprocessConfig) -> Result<Vec<PreparedWindow>> {
        self.window_offsets(cfg)?
            .into_iter()
            .map(|o| self.window(o, cfg))
            .collect()
    }
}
