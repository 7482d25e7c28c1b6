//! Labeled univariate series, UCR-style file ingestion, train-statistics
//! standardization and sliding windows.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Divisor guard used when the training region is constant.
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("file name `{0}` does not end in three integers (train_end, anomaly start, anomaly end)")]
    MalformedName(String),
    #[error("series `{0}` contains no values")]
    EmptySeries(String),
    #[error("token `{token}` at position {position} is not a finite number")]
    NonNumericToken { token: String, position: usize },
    #[error("anomaly span ({start}, {end}) is invalid for train_end={train_end}, len={len}")]
    SpanOutOfBounds {
        start: usize,
        end: usize,
        train_end: usize,
        len: usize,
    },
    #[error("train_end={train_end} is invalid for a series of length {len}")]
    InvalidSplit { train_end: usize, len: usize },
    #[error("series is too short: need at least {needed} training points, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("invalid window shape: input={input}, horizon={horizon}, stride={stride}")]
    InvalidWindowShape {
        input: usize,
        horizon: usize,
        stride: usize,
    },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Inclusive anomaly interval `[start, end]` in absolute series coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }
}

/// One univariate series with its train/test split and ground-truth anomalies.
///
/// Values are finite; every anomaly span lies inside the test region
/// `[train_end, len)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    pub id: String,
    pub domain: String,
    pub values: Vec<f64>,
    pub train_end: usize,
    pub anomaly_spans: Vec<Span>,
    pub source_path: String,
}

impl LabeledSeries {
    /// Builds a series and checks every invariant.
    pub fn new(
        id: impl Into<String>,
        domain: impl Into<String>,
        values: Vec<f64>,
        train_end: usize,
        anomaly_spans: Vec<Span>,
        source_path: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        let series = Self {
            id: id.into(),
            domain: domain.into(),
            values,
            train_end,
            anomaly_spans,
            source_path: source_path.into(),
        };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let len = self.values.len();
        if len == 0 {
            return Err(DatasetError::EmptySeries(self.id.clone()));
        }
        if let Some(position) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(DatasetError::NonNumericToken {
                token: self.values[position].to_string(),
                position,
            });
        }
        if self.train_end == 0 || self.train_end >= len {
            return Err(DatasetError::InvalidSplit {
                train_end: self.train_end,
                len,
            });
        }
        for span in &self.anomaly_spans {
            if span.start < self.train_end || span.start > span.end || span.end >= len {
                return Err(DatasetError::SpanOutOfBounds {
                    start: span.start,
                    end: span.end,
                    train_end: self.train_end,
                    len,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn train(&self) -> &[f64] {
        &self.values[..self.train_end]
    }

    pub fn test(&self) -> &[f64] {
        &self.values[self.train_end..]
    }

    /// Absolute index range `[start, end)` of a region.
    pub fn region_bounds(&self, region: Region) -> (usize, usize) {
        match region {
            Region::Train => (0, self.train_end),
            Region::Test => (self.train_end, self.values.len()),
        }
    }

    /// Binary ground truth for absolute positions `[from, to)`.
    pub fn labels_in(&self, from: usize, to: usize) -> Vec<u8> {
        (from..to)
            .map(|t| u8::from(self.anomaly_spans.iter().any(|s| s.contains(t))))
            .collect()
    }
}

/// Z-score parameters estimated on the training region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub mean: f64,
    /// Population (1/N) standard deviation.
    pub std: f64,
    pub epsilon: f64,
}

impl StandardizationParams {
    pub fn divisor(&self) -> f64 {
        self.std.max(self.epsilon)
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.divisor()
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.divisor() + self.mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Train,
    Test,
}

/// A contiguous `(input, future)` pair cut from one series.
///
/// `start` is the absolute index of the first input point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub series_id: String,
    pub start: usize,
    pub input: Vec<f64>,
    pub future: Vec<f64>,
}

impl Window {
    /// Cuts a window from `values` with the input starting at `start`.
    pub fn from_slice(series_id: &str, values: &[f64], start: usize, input_len: usize, horizon: usize) -> Self {
        let split = start + input_len;
        Self {
            series_id: series_id.to_owned(),
            start,
            input: values[start..split].to_vec(),
            future: values[split..split + horizon].to_vec(),
        }
    }

    /// Absolute index of the first future point.
    pub fn future_start(&self) -> usize {
        self.start + self.input.len()
    }

    /// Same window with the input cut down to its last `len` points.
    pub fn with_input_suffix(&self, len: usize) -> Self {
        let drop = self.input.len().saturating_sub(len);
        Self {
            series_id: self.series_id.clone(),
            start: self.start + drop,
            input: self.input[drop..].to_vec(),
            future: self.future.clone(),
        }
    }
}

/// Result of [`make_windows`]; `too_short` flags a region that could not
/// hold a single window.
#[derive(Debug, Clone, PartialEq)]
pub struct Windows {
    pub windows: Vec<Window>,
    pub too_short: bool,
}

/// Parses a UCR-Anomaly-Archive style file.
///
/// The file stem must end in `_<trainEnd>_<anomStart>_<anomEnd>`; when more
/// integer fields trail the name, the last three are used.
pub fn parse_ucr_file(path: impl AsRef<Path>) -> Result<LabeledSeries, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let domain = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_ucr_text(&file_name, &domain, &text, &path.display().to_string())
}

/// Parses already-loaded file contents; `file_name` carries the split encoding.
pub fn parse_ucr_text(
    file_name: &str,
    domain: &str,
    text: &str,
    source_path: &str,
) -> Result<LabeledSeries, DatasetError> {
    let (id, train_end, start, end) = decode_file_name(file_name)?;
    let mut values = Vec::new();
    for (position, token) in text.split_whitespace().enumerate() {
        match token.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            _ => {
                return Err(DatasetError::NonNumericToken {
                    token: token.to_owned(),
                    position,
                })
            }
        }
    }
    if values.is_empty() {
        return Err(DatasetError::EmptySeries(id));
    }
    let len = values.len();
    if start < train_end || start > end || end >= len {
        return Err(DatasetError::SpanOutOfBounds {
            start,
            end,
            train_end,
            len,
        });
    }
    let domain = if domain.is_empty() {
        infer_domain(&id)
    } else {
        domain.to_owned()
    };
    LabeledSeries::new(id, domain, values, train_end, vec![Span::new(start, end)], source_path)
}

fn decode_file_name(file_name: &str) -> Result<(String, usize, usize, usize), DatasetError> {
    let stem = match file_name.rfind('.') {
        Some(dot) if dot > 0 => &file_name[..dot],
        _ => file_name,
    };
    let parts: Vec<&str> = stem.split('_').collect();
    let malformed = || DatasetError::MalformedName(file_name.to_owned());
    if parts.len() < 4 {
        return Err(malformed());
    }
    let tail = &parts[parts.len() - 3..];
    let mut numbers = [0usize; 3];
    for (slot, part) in numbers.iter_mut().zip(tail) {
        *slot = part.parse().map_err(|_| malformed())?;
    }
    let id = parts[..parts.len() - 3].join("_");
    Ok((id, numbers[0], numbers[1], numbers[2]))
}

/// `001_UCR_Anomaly_ECG1` style ids carry the domain as the last name token.
fn infer_domain(id: &str) -> String {
    id.rsplit('_')
        .find(|p| p.parse::<usize>().is_err())
        .map(|p| p.trim_end_matches(|c: char| c.is_ascii_digit()).to_owned())
        .filter(|p| !p.is_empty())
        .unwrap_or_else(|| "default".to_owned())
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-scores the whole series with statistics from the training region only.
pub fn standardize(series: &LabeledSeries) -> Result<(LabeledSeries, StandardizationParams), DatasetError> {
    standardize_with_epsilon(series, DEFAULT_EPSILON)
}

pub fn standardize_with_epsilon(
    series: &LabeledSeries,
    epsilon: f64,
) -> Result<(LabeledSeries, StandardizationParams), DatasetError> {
    if series.train_end < 2 {
        return Err(DatasetError::SeriesTooShort {
            needed: 2,
            got: series.train_end,
        });
    }
    let (mean, std) = mean_std(series.train());
    let params = StandardizationParams { mean, std, epsilon };
    let mut out = series.clone();
    out.values = series.values.iter().map(|&x| params.apply(x)).collect();
    Ok((out, params))
}

/// Inverse of [`standardize`].
pub fn destandardize(series: &LabeledSeries, params: &StandardizationParams) -> LabeledSeries {
    let mut out = series.clone();
    out.values = series.values.iter().map(|&z| params.invert(z)).collect();
    out
}

/// Cuts `(input, future)` windows at offsets `0, stride, 2*stride, ...`
/// relative to the region start. Windows never cross the region boundary.
pub fn make_windows(
    series: &LabeledSeries,
    region: Region,
    input_len: usize,
    horizon: usize,
    stride: usize,
) -> Result<Windows, DatasetError> {
    if input_len == 0 || horizon == 0 || stride == 0 {
        return Err(DatasetError::InvalidWindowShape {
            input: input_len,
            horizon,
            stride,
        });
    }
    let (lo, hi) = series.region_bounds(region);
    let region_len = hi - lo;
    let span = input_len + horizon;
    if region_len < span {
        return Ok(Windows {
            windows: Vec::new(),
            too_short: true,
        });
    }
    let count = (region_len - span) / stride + 1;
    let windows = (0..count)
        .map(|i| Window::from_slice(&series.id, &series.values, lo + i * stride, input_len, horizon))
        .collect();
    Ok(Windows {
        windows,
        too_short: false,
    })
}
