//! Single-lead ECG records and their CSV representation.
//!
//! ```text
//! fs=<float>
//! label=<0|1>                 (optional)
//! point_labels=<comma ints>   (optional)
//! <one sample per line>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordLabel {
    Normal,
    Abnormal,
}

impl RecordLabel {
    pub fn as_int(self) -> u8 {
        match self {
            RecordLabel::Normal => 0,
            RecordLabel::Abnormal => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub id: String,
    pub samples: Vec<f64>,
    pub sampling_rate_hz: f64,
    pub record_label: Option<RecordLabel>,
    pub point_labels: Option<Vec<u8>>,
}

impl EcgRecord {
    pub fn new(id: impl Into<String>, samples: Vec<f64>, sampling_rate_hz: f64) -> Result<Self> {
        let r = Self {
            id: id.into(),
            samples,
            sampling_rate_hz,
            record_label: None,
            point_labels: None,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::contract(format!(
                "record {} has {} samples, need at least 2",
                self.id,
                self.samples.len()
            )));
        }
        if !(self.sampling_rate_hz > 0.0) || !self.sampling_rate_hz.is_finite() {
            return Err(Error::contract(format!(
                "record {} has invalid sampling rate {}",
                self.id, self.sampling_rate_hz
            )));
        }
        if let Some(p) = &self.point_labels {
            if p.len() != self.samples.len() {
                return Err(Error::contract(format!(
                    "record {}: {} point labels for {} samples",
                    self.id,
                    p.len(),
                    self.samples.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 12);
        writeln!(out, "fs={}", self.sampling_rate_hz).unwrap();
        if let Some(l) = self.record_label {
            writeln!(out, "label={}", l.as_int()).unwrap();
        }
        if let Some(p) = &self.point_labels {
            out.push_str("point_labels=");
            for (i, v) in p.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        for v in &self.samples {
            writeln!(out, "{v}").unwrap();
        }
        out
    }

    pub fn parse_csv(id: &str, text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().peekable();
        let fs = match lines.next() {
            Some((_, l)) => l
                .trim()
                .strip_prefix("fs=")
                .ok_or_else(|| err(1, "expected `fs=<float>` header".into()))?
                .parse::<f64>()
                .map_err(|e| err(1, format!("bad sampling rate: {e}")))?,
            None => return Err(err(1, "empty file".into())),
        };

        let mut record_label = None;
        if let Some((i, l)) = lines.peek() {
            if let Some(v) = l.trim().strip_prefix("label=") {
                record_label = Some(match v {
                    "0" => RecordLabel::Normal,
                    "1" => RecordLabel::Abnormal,
                    other => return Err(err(i + 1, format!("label must be 0 or 1, got `{other}`"))),
                });
                lines.next();
            }
        }

        let mut point_labels = None;
        if let Some((i, l)) = lines.peek() {
            if let Some(v) = l.trim().strip_prefix("point_labels=") {
                let line_no = i + 1;
                let parsed = v
                    .split(',')
                    .map(|s| match s.trim() {
                        "0" => Ok(0u8),
                        "1" => Ok(1u8),
                        other => Err(err(line_no, format!("point label must be 0 or 1, got `{other}`"))),
                    })
                    .collect::<Result<Vec<u8>>>()?;
                point_labels = Some(parsed);
                lines.next();
            }
        }

        let mut samples = Vec::new();
        for (i, l) in lines {
            let t = l.trim();
            if t.is_empty() {
                continue;
            }
            let v = t
                .parse::<f64>()
                .map_err(|e| err(i + 1, format!("bad sample `{t}`: {e}")))?;
            if !v.is_finite() {
                return Err(err(i + 1, format!("non-finite sample `{t}`")));
            }
            samples.push(v);
        }

        let rec = Self {
            id: id.to_string(),
            samples,
            sampling_rate_hz: fs,
            record_label,
            point_labels,
        };
        rec.validate().map_err(|e| err(0, e.to_string()))?;
        Ok(rec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse_csv(&id, &text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Reads every `*.csv` record in a directory, sorted by file name.
pub fn read_split(dir: &Path) -> Result<Vec<EcgRecord>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths.iter().map(|p| EcgRecord::read(p)).collect()
}
