//! Point-wise and threshold-free evaluation.
//!
//! VUS here is a self-contained variant: labels outside an anomaly decay as
//! `sqrt(1 - d / w)` over a buffer of width `w`, TPR/FPR/precision are
//! weighted by those soft labels, and areas and the volume over `w` are both
//! trapezoidal. There is no existence-reward term.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ground truth has no positive mass")]
    NoPositiveMass,
    #[error("bootstrap needs at least one value")]
    EmptyInput,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("report output failed: {0}")]
    Output(String),
}

/// Binary labels plus the spans that produced them, in score coordinates.
///
/// Span ends may fall outside `0..labels.len()` when an anomaly straddles
/// the scored stretch; the buffer still decays from the true boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub labels: Vec<u8>,
    pub spans: Vec<(i64, i64)>,
}

impl GroundTruth {
    pub fn from_spans(len: usize, spans: Vec<(i64, i64)>) -> Self {
        let labels = (0..len as i64)
            .map(|t| u8::from(spans.iter().any(|&(s, e)| s <= t && t <= e)))
            .collect();
        Self { labels, spans }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn has_positive(&self) -> bool {
        self.labels.contains(&1)
    }
}

/// `(precision, recall, f1)` from binary vectors.
pub fn pointwise_prf(pred: &[u8], truth: &[u8]) -> Result<(f64, f64, f64), MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), truth.len()));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}

/// Soft labels: 1 inside a span, `sqrt(1 - d / w)` at distance `d` outside,
/// pointwise maximum over spans.
pub fn continuous_labels(truth: &GroundTruth, w: usize) -> Vec<f64> {
    if w == 0 {
        return truth.labels.iter().map(|&l| f64::from(l)).collect();
    }
    let w = w as f64;
    (0..truth.len() as i64)
        .map(|t| {
            if truth.labels[t as usize] == 1 {
                return 1.0;
            }
            truth
                .spans
                .iter()
                .map(|&(s, e)| {
                    let d = if t < s {
                        s - t
                    } else if t > e {
                        t - e
                    } else {
                        0
                    };
                    (1.0 - d as f64 / w).max(0.0).sqrt()
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Roc,
    Pr,
}

/// Indices sorted by descending score.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Both areas for one set of soft labels, given a precomputed order.
fn areas_sorted(order: &[usize], scores: &[f64], soft: &[f64]) -> Result<(f64, f64), MetricsError> {
    let positive: f64 = soft.iter().sum();
    if positive <= 0.0 {
        return Err(MetricsError::NoPositiveMass);
    }
    let negative: f64 = soft.iter().map(|l| 1.0 - l).sum();

    // The +inf sentinel: nothing predicted, precision defined as 1.
    let (mut fpr0, mut tpr0, mut prec0) = (0.0, 0.0, 1.0);
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut roc, mut pr) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let level = scores[order[i]];
        while i < order.len() && scores[order[i]] == level {
            let l = soft[order[i]];
            tp += l;
            fp += 1.0 - l;
            i += 1;
        }
        let tpr = tp / positive;
        let fpr = if negative > 0.0 { fp / negative } else { 0.0 };
        let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 1.0 };
        roc += (fpr - fpr0) * (tpr + tpr0) / 2.0;
        pr += (tpr - tpr0) * (prec + prec0) / 2.0;
        fpr0 = fpr;
        tpr0 = tpr;
        prec0 = prec;
    }
    if negative <= 0.0 {
        roc = 1.0;
    }
    Ok((roc.clamp(0.0, 1.0), pr.clamp(0.0, 1.0)))
}

/// Soft-label weighted ROC or PR area.
pub fn auc_weighted(scores: &[f64], soft_labels: &[f64], kind: CurveKind) -> Result<f64, MetricsError> {
    if scores.len() != soft_labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), soft_labels.len()));
    }
    let (roc, pr) = areas_sorted(&descending_order(scores), scores, soft_labels)?;
    Ok(match kind {
        CurveKind::Roc => roc,
        CurveKind::Pr => pr,
    })
}

/// Buffer widths `round(i * w_max / steps)` for `i = 0..=steps`, deduplicated.
pub fn buffer_widths(w_max: usize, steps: usize) -> Vec<usize> {
    let mut widths: Vec<usize> = (0..=steps)
        .map(|i| (i as f64 * w_max as f64 / steps as f64).round() as usize)
        .collect();
    widths.dedup();
    widths
}

/// `(vus_roc, vus_pr)`: trapezoidal mean of the areas over buffer widths.
pub fn vus(scores: &[f64], truth: &GroundTruth, w_max: usize, steps: usize) -> Result<(f64, f64), MetricsError> {
    if scores.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), truth.len()));
    }
    if steps == 0 {
        return Err(MetricsError::InvalidParameter("steps must be >= 1".into()));
    }
    let order = descending_order(scores);
    let widths = buffer_widths(w_max, steps);
    let areas = widths
        .iter()
        .map(|&w| areas_sorted(&order, scores, &continuous_labels(truth, w)))
        .collect::<Result<Vec<_>, _>>()?;
    if widths.len() == 1 {
        return Ok(areas[0]);
    }
    let (mut roc, mut pr) = (0.0, 0.0);
    for i in 1..widths.len() {
        let dw = (widths[i] - widths[i - 1]) as f64;
        roc += dw * (areas[i].0 + areas[i - 1].0) / 2.0;
        pr += dw * (areas[i].1 + areas[i - 1].1) / 2.0;
    }
    let span = (widths[widths.len() - 1] - widths[0]) as f64;
    Ok((roc / span, pr / span))
}

/// Default VUS parameters for a series with the given period.
pub fn default_vus_params(period: usize) -> (usize, usize) {
    (period, period.clamp(1, 20))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEstimate {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population std of `iterations` resample means.
pub fn bootstrap(values: &[f64], iterations: usize, seed: u64) -> Result<BootstrapEstimate, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if iterations == 0 {
        return Err(MetricsError::InvalidParameter("iterations must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let means: Vec<f64> = (0..iterations)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / iterations as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / iterations as f64;
    Ok(BootstrapEstimate { mean, std: var.sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub vus_roc: f64,
    pub vus_pr: f64,
}

impl MetricSet {
    pub const NAMES: [&'static str; 5] = ["f1", "precision", "recall", "vus_roc", "vus_pr"];

    pub fn values(&self) -> [f64; 5] {
        [self.f1, self.precision, self.recall, self.vus_roc, self.vus_pr]
    }

    fn from_values(v: [f64; 5]) -> Self {
        Self {
            f1: v[0],
            precision: v[1],
            recall: v[2],
            vus_roc: v[3],
            vus_pr: v[4],
        }
    }

    /// Arithmetic mean of each metric.
    pub fn mean<'a>(sets: impl IntoIterator<Item = &'a MetricSet>) -> Self {
        let mut sum = [0.0; 5];
        let mut count = 0usize;
        for s in sets {
            for (acc, v) in sum.iter_mut().zip(s.values()) {
                *acc += v;
            }
            count += 1;
        }
        if count == 0 {
            return Self::default();
        }
        Self::from_values(sum.map(|v| v / count as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesResult {
    pub domain: String,
    pub metrics: MetricSet,
    pub period: usize,
    pub threshold: f64,
    pub scored_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub series: usize,
    pub mean: MetricSet,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BTreeMap<String, BootstrapEstimate>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSeries {
    pub series_id: String,
    pub reason: String,
}

/// Per-series metrics with per-domain and global means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub setting: String,
    pub per_series: BTreeMap<String, SeriesResult>,
    pub per_domain: BTreeMap<String, Aggregate>,
    pub global: Aggregate,
    pub skipped: Vec<SkippedSeries>,
    pub warnings: Vec<String>,
}

fn aggregate<'a>(
    results: impl Iterator<Item = &'a SeriesResult> + Clone,
    bootstrap_iterations: Option<(usize, u64)>,
) -> Result<Aggregate, MetricsError> {
    let sets: Vec<MetricSet> = results.map(|r| r.metrics).collect();
    let mean = MetricSet::mean(&sets);
    let bootstrap = match bootstrap_iterations {
        Some((iterations, seed)) if !sets.is_empty() => {
            let mut out = BTreeMap::new();
            for (k, name) in MetricSet::NAMES.iter().enumerate() {
                let column: Vec<f64> = sets.iter().map(|s| s.values()[k]).collect();
                out.insert((*name).to_owned(), bootstrap(&column, iterations, seed)?);
            }
            Some(out)
        }
        _ => None,
    };
    Ok(Aggregate {
        series: sets.len(),
        mean,
        bootstrap,
    })
}

impl EvalReport {
    /// Builds aggregates from per-series results. Bootstrap uses
    /// `(iterations, seed)` when given.
    pub fn assemble(
        setting: impl Into<String>,
        per_series: BTreeMap<String, SeriesResult>,
        skipped: Vec<SkippedSeries>,
        warnings: Vec<String>,
        bootstrap_iterations: Option<(usize, u64)>,
    ) -> Result<Self, MetricsError> {
        let mut domains: BTreeMap<String, Vec<&SeriesResult>> = BTreeMap::new();
        for r in per_series.values() {
            domains.entry(r.domain.clone()).or_default().push(r);
        }
        let per_domain = domains
            .into_iter()
            .map(|(d, rs)| Ok((d, aggregate(rs.into_iter(), bootstrap_iterations)?)))
            .collect::<Result<_, MetricsError>>()?;
        let global = aggregate(per_series.values(), bootstrap_iterations)?;
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            setting: setting.into(),
            per_series,
            per_domain,
            global,
            skipped,
            warnings,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat per-series rows: id, domain, metrics, period, threshold.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let err = |e: csv::Error| MetricsError::Output(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "series_id",
            "domain",
            "f1",
            "precision",
            "recall",
            "vus_roc",
            "vus_pr",
            "period",
            "threshold",
        ])
        .map_err(err)?;
        for (id, r) in &self.per_series {
            let m = r.metrics;
            w.write_record([
                id.clone(),
                r.domain.clone(),
                m.f1.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.vus_roc.to_string(),
                m.vus_pr.to_string(),
                r.period.to_string(),
                r.threshold.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| MetricsError::Output(e.to_string()))
    }
}
