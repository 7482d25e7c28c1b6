//! Anomaly scores, Fourier period estimation, moving-average smoothing and
//! the mean + 3 sigma binarization rule.

use std::f64::consts::PI;
use std::io::Write;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::mean_std;

/// Period returned when the spectrum has no dominant peak.
pub const FALLBACK_PERIOD: usize = 10;
/// Minimum peak-to-mean magnitude ratio for a spectrum to count as periodic.
pub const DOMINANCE_THRESHOLD: f64 = 5.0;
/// Shortest series the period estimator accepts.
pub const MIN_PERIOD_INPUT: usize = 8;
/// Number of standard deviations above the mean used by [`threshold_labels`].
pub const THRESHOLD_SIGMAS: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("length mismatch: forecast has {0} points, truth has {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} points, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("moving-average window must be at least 1")]
    InvalidWindow,
    #[error("csv output failed: {0}")]
    Csv(String),
}

/// Per-timestep anomaly scores for a stretch of the test region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub series_id: String,
    /// Position in the test region of the first score.
    pub offset: usize,
    pub scores: Vec<f64>,
    pub smoothed: bool,
    pub sma_window: Option<usize>,
}

impl ScoreSeries {
    pub fn raw(series_id: impl Into<String>, offset: usize, scores: Vec<f64>) -> Self {
        Self {
            series_id: series_id.into(),
            offset,
            scores,
            smoothed: false,
            sma_window: None,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodEstimate {
    pub period: usize,
    pub dominance: f64,
    pub fallback_used: bool,
}

/// `|forecast[t] - truth[t]|`. Reconstructions go through the same rule.
pub fn anomaly_scores(forecast: &[f64], truth: &[f64]) -> Result<ScoreSeries, ScoringError> {
    if forecast.len() != truth.len() {
        return Err(ScoringError::LengthMismatch(forecast.len(), truth.len()));
    }
    if forecast.is_empty() {
        return Err(ScoringError::SeriesTooShort { needed: 1, got: 0 });
    }
    let scores = forecast.iter().zip(truth).map(|(f, x)| (f - x).abs()).collect();
    Ok(ScoreSeries::raw(String::new(), 0, scores))
}

/// Dominant period of a series from the magnitude spectrum of its
/// mean-removed values.
///
/// The coarse peak bin is refined on a 16x zero-padded spectrum so periods
/// that do not divide the length still round to the right integer.
pub fn estimate_period(values: &[f64]) -> Result<PeriodEstimate, ScoringError> {
    let n = values.len();
    if n < MIN_PERIOD_INPUT {
        return Err(ScoringError::SeriesTooShort {
            needed: MIN_PERIOD_INPUT,
            got: n,
        });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let mut bins: Vec<Complex64> = centered.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut bins);

    let half = n / 2;
    let magnitudes: Vec<f64> = bins[1..=half].iter().map(|c| c.norm()).collect();
    let mut peak = 0;
    for (i, &m) in magnitudes.iter().enumerate() {
        if m > magnitudes[peak] {
            peak = i;
        }
    }
    let mean_mag = magnitudes.iter().sum::<f64>() / half as f64;
    let scale = centered.iter().map(|v| v.abs()).fold(0.0, f64::max);
    // A constant series leaves only rounding noise in the spectrum.
    let flat = mean_mag <= 1e-12 * scale.max(1.0) * n as f64;
    let dominance = if flat { 0.0 } else { magnitudes[peak] / mean_mag };
    if flat || dominance < DOMINANCE_THRESHOLD {
        return Ok(PeriodEstimate {
            period: FALLBACK_PERIOD,
            dominance,
            fallback_used: true,
        });
    }

    let coarse = (peak + 1) as f64;
    let refined = refine_peak(&centered, coarse);
    let period = (n as f64 / refined).round() as usize;
    Ok(PeriodEstimate {
        period: period.clamp(2, half.max(2)),
        dominance,
        fallback_used: false,
    })
}

/// Spectrum magnitude at fractional bin `k`.
fn dtft_magnitude(values: &[f64], k: f64) -> f64 {
    let n = values.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (t, &v) in values.iter().enumerate() {
        let angle = -2.0 * PI * k * t as f64 / n;
        re += v * angle.cos();
        im += v * angle.sin();
    }
    re.hypot(im)
}

fn refine_peak(values: &[f64], coarse: f64) -> f64 {
    const STEPS: i32 = 16;
    let half = (values.len() / 2) as f64;
    let mut best = (dtft_magnitude(values, coarse), coarse);
    for step in -STEPS..=STEPS {
        let k = coarse + f64::from(step) / f64::from(STEPS);
        if step == 0 || k < 0.5 || k > half {
            continue;
        }
        let m = dtft_magnitude(values, k);
        if m > best.0 {
            best = (m, k);
        }
    }
    best.1
}

/// Trailing simple moving average; the first `n - 1` points average the
/// points available so far.
pub fn sma_smooth(scores: &ScoreSeries, n: usize) -> Result<ScoreSeries, ScoringError> {
    if n == 0 {
        return Err(ScoringError::InvalidWindow);
    }
    let raw = &scores.scores;
    let out = (0..raw.len())
        .map(|t| {
            let count = (t + 1).min(n);
            (0..count).map(|i| raw[t - i]).sum::<f64>() / count as f64
        })
        .collect();
    Ok(ScoreSeries {
        series_id: scores.series_id.clone(),
        offset: scores.offset,
        scores: out,
        smoothed: true,
        sma_window: Some(n),
    })
}

/// Labels points strictly above `mean + 3 * std` (population std).
pub fn threshold_labels(scores: &ScoreSeries) -> Result<(Vec<u8>, f64), ScoringError> {
    if scores.len() < 2 {
        return Err(ScoringError::SeriesTooShort {
            needed: 2,
            got: scores.len(),
        });
    }
    let (lo, hi) = scores
        .scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    if lo == hi {
        // Rounding in the mean of a constant vector must not flag every point.
        return Ok((vec![0; scores.len()], hi));
    }
    let (mean, std) = mean_std(&scores.scores);
    let threshold = mean + THRESHOLD_SIGMAS * std;
    let labels = scores.scores.iter().map(|&s| u8::from(s > threshold)).collect();
    Ok((labels, threshold))
}

/// One row of a score dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub series_id: String,
    pub t_absolute: usize,
    pub raw_score: f64,
    pub smoothed_score: f64,
    pub label: u8,
    pub threshold: f64,
}

/// Writes score rows as CSV with a header line.
pub fn write_score_csv<W: Write>(out: W, rows: &[ScoreRow]) -> Result<(), ScoringError> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row).map_err(|e| ScoringError::Csv(e.to_string()))?;
    }
    writer.flush().map_err(|e| ScoringError::Csv(e.to_string()))
}
