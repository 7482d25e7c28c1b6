//! Benchmark orchestration: dataset loading, the three pipeline settings,
//! pool-fraction sweeps, similarity diagnostics and report emission.
//!
//! Every evaluation window carries a long input of `Te + H + Tt` points, the
//! whole budget a zero-shot forecaster gets. Retrieval settings match the
//! last `max(Te, Tt)` of those points against the candidate pool and hand the
//! assembled `[example, example future, last Tt]` context to the forecaster,
//! so every setting scores exactly the same test points.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, make_windows, LabeledSeries, Region, Window};
use crate::forecast::{
    assemble_context, forecast, train_linear_ratfm, Budget, ContextWindow, ExampleCopy, Forecaster, LinearForecaster,
    SeasonalNaive, TrainingReport,
};
use crate::metrics::{
    default_vus_params, pointwise_prf, vus, EvalReport, GroundTruth, MetricSet, SeriesResult, SkippedSeries,
};
use crate::retrieval::{ncc_with_mode, subsample_pool, CandidatePool, LagMode, PreparedPool};
use crate::scoring::{
    anomaly_scores, estimate_period, sma_smooth, threshold_labels, PeriodEstimate, ScoreRow, ScoreSeries,
};
use crate::synth::{generate_synthetic, SynthSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl HarnessError {
    fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    ZeroShotNaive,
    RatfmCopy,
    RatfmLinear,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::ZeroShotNaive, Setting::RatfmCopy, Setting::RatfmLinear];

    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::ZeroShotNaive => "zero_shot_naive",
            Setting::RatfmCopy => "ratfm_copy",
            Setting::RatfmLinear => "ratfm_linear",
        }
    }

    pub fn uses_retrieval(&self) -> bool {
        !matches!(self, Setting::ZeroShotNaive)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Setting::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown setting `{s}` (expected zero_shot_naive, ratfm_copy or ratfm_linear)"))
    }
}

/// Where retrieval candidates are cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolRegion {
    /// Training regions of the other series (no label leakage).
    Train,
    /// Whole other series, anomalies included.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data_root: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    pub budget: Budget,
    /// Offset between consecutive evaluation windows; defaults to `H`.
    pub eval_stride: Option<usize>,
    pub pool_region: PoolRegion,
    pub pool_stride: usize,
    pub pool_fraction: f64,
    pub lag_mode: LagMode,
    pub diagnostics_lag_mode: LagMode,
    /// Leave windows whose input or future touches an anomaly out of the
    /// similarity diagnostics.
    pub diagnostics_skip_anomalous: bool,
    pub sma: bool,
    /// Region the SMA window (period) is estimated on.
    pub period_region: Region,
    /// VUS buffer maximum; defaults to the series period.
    pub vus_w_max: Option<usize>,
    /// VUS buffer steps; defaults to `min(period, 20)`.
    pub vus_steps: Option<usize>,
    pub ridge_reg: f64,
    pub ridge_train_stride: usize,
    pub leave_one_domain_out: bool,
    /// Zero disables bootstrap intervals.
    pub bootstrap_iterations: usize,
    pub seed: u64,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_root: None,
            synth: None,
            budget: Budget::default(),
            eval_stride: None,
            pool_region: PoolRegion::Train,
            pool_stride: 1,
            pool_fraction: 1.0,
            lag_mode: LagMode::MaxOverLags,
            diagnostics_lag_mode: LagMode::ZeroLagOnly,
            diagnostics_skip_anomalous: true,
            sma: true,
            period_region: Region::Train,
            vus_w_max: None,
            vus_steps: None,
            ridge_reg: 1.0,
            ridge_train_stride: 8,
            leave_one_domain_out: true,
            bootstrap_iterations: 1000,
            seed: 0,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale preset over the default synthetic benchmark.
    pub fn synthetic_benchmark(seed: u64) -> Self {
        Self {
            synth: Some(SynthSpec {
                seed,
                ..SynthSpec::default()
            }),
            budget: Budget::new(96, 48, 96),
            pool_stride: 4,
            ridge_train_stride: 6,
            seed,
            ..Self::default()
        }
    }

    pub fn horizon(&self) -> usize {
        self.budget.horizon
    }

    pub fn eval_stride(&self) -> usize {
        self.eval_stride.unwrap_or(self.budget.horizon)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let b = self.budget;
        if b.horizon == 0 || b.target_input == 0 {
            return bad(format!("budget {:?} needs H > 0 and Tt > 0", b));
        }
        if b.example_input == 0 {
            return bad("example input length Te must be positive".into());
        }
        let stride = self.eval_stride();
        if stride == 0 || stride > b.horizon {
            return bad(format!("eval_stride must be in 1..={}, got {stride}", b.horizon));
        }
        if self.pool_stride == 0 || self.ridge_train_stride == 0 {
            return bad("pool_stride and ridge_train_stride must be positive".into());
        }
        if !(self.pool_fraction > 0.0 && self.pool_fraction <= 1.0) {
            return bad(format!("pool_fraction must be in (0, 1], got {}", self.pool_fraction));
        }
        if !(self.ridge_reg >= 0.0 && self.ridge_reg.is_finite()) {
            return bad(format!("ridge_reg must be non-negative, got {}", self.ridge_reg));
        }
        if self.vus_steps == Some(0) {
            return bad("vus_steps must be at least 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if let Some(spec) = &self.synth {
            spec.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Loaded series plus files that failed to parse.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub series: Vec<LabeledSeries>,
    pub skipped: Vec<SkippedSeries>,
    pub warnings: Vec<String>,
}

/// Reads every file under `root`. Sub-directories name the domain; files
/// directly in `root` infer it from their id.
pub fn load_dir(root: impl AsRef<Path>) -> Result<Dataset, HarnessError> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(HarnessError::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut files = Vec::new();
    collect_files(root, &mut files)?;
    files.sort();
    let mut out = Dataset::default();
    for path in files {
        // Sub-directory files take the directory name; root files infer it from the id.
        let domain = match path.parent() {
            Some(parent) if parent != root => parent.file_name().map(|n| n.to_string_lossy().into_owned()),
            _ => None,
        }
        .unwrap_or_default();
        let parsed = fs::read_to_string(&path).map_err(|e| e.to_string()).and_then(|text| {
            let name = path.file_name().unwrap_or_default().to_string_lossy();
            dataset::parse_ucr_text(&name, &domain, &text, &path.display().to_string()).map_err(|e| e.to_string())
        });
        match parsed {
            Ok(s) => out.series.push(s),
            Err(reason) => out.skipped.push(SkippedSeries {
                series_id: path.display().to_string(),
                reason,
            }),
        }
    }
    if out.series.is_empty() {
        out.warnings.push(format!("no series found under {}", root.display()));
    }
    Ok(out)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    let entries = fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path.file_name().is_some_and(|n| !n.to_string_lossy().starts_with('.')) {
            out.push(path);
        }
    }
    Ok(())
}

/// Loads the configured dataset: a directory when `data_root` is set,
/// otherwise the synthetic spec.
pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset, HarnessError> {
    match (&config.data_root, &config.synth) {
        (Some(root), _) => load_dir(root),
        (None, Some(spec)) => Ok(Dataset {
            series: generate_synthetic(spec).map_err(|e| HarnessError::Config(e.to_string()))?,
            ..Dataset::default()
        }),
        (None, None) => Err(HarnessError::Config("no data_root or synth spec configured".into())),
    }
}

/// Pipeline stages reported to a [`PipelineObserver`], in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Retrieve,
    Assemble,
    Forecast,
    Score,
    Smooth,
    Threshold,
    Metrics,
}

pub trait PipelineObserver: Sync {
    fn stage(&self, series_id: &str, stage: Stage);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoopObserver;

impl PipelineObserver for NoopObserver {
    fn stage(&self, _: &str, _: Stage) {}
}

/// A standardized series ready for evaluation.
#[derive(Debug, Clone)]
pub struct PreparedSeries {
    pub series: LabeledSeries,
    pub period: PeriodEstimate,
}

/// Standardized dataset with per-series periods; immutable during a run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub series: Vec<PreparedSeries>,
    pub skipped: Vec<SkippedSeries>,
    pub warnings: Vec<String>,
}

impl Prepared {
    pub fn new(config: &ExperimentConfig, dataset: Dataset) -> Result<Self, HarnessError> {
        config.validate()?;
        let mut out = Self {
            config: config.clone(),
            series: Vec::new(),
            skipped: dataset.skipped,
            warnings: dataset.warnings,
        };
        let mut series = dataset.series;
        series.sort_by(|a, b| a.id.cmp(&b.id));
        for s in series {
            let prepared = dataset::standardize(&s).map_err(|e| e.to_string()).and_then(|(z, _)| {
                let region = match config.period_region {
                    Region::Train => z.train(),
                    Region::Test => z.test(),
                };
                let period = estimate_period(region).map_err(|e| e.to_string())?;
                Ok(PreparedSeries { series: z, period })
            });
            match prepared {
                Ok(p) => out.series.push(p),
                Err(reason) => {
                    warn!("skipping {}: {reason}", s.id);
                    out.skipped.push(SkippedSeries {
                        series_id: s.id.clone(),
                        reason,
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn domains(&self) -> Vec<String> {
        let mut d: Vec<String> = self.series.iter().map(|s| s.series.domain.clone()).collect();
        d.sort();
        d.dedup();
        d
    }

    /// Per-domain candidate pools with `fraction` of the windows kept.
    pub fn pools(&self, fraction: f64) -> Result<BTreeMap<String, PreparedPool>, HarnessError> {
        let cfg = &self.config;
        let len = cfg.budget.retrieval_input();
        let h = cfg.horizon();
        let mut entries: BTreeMap<String, Vec<Window>> = BTreeMap::new();
        for ps in &self.series {
            let s = &ps.series;
            let windows = match cfg.pool_region {
                PoolRegion::Train => {
                    make_windows(s, Region::Train, len, h, cfg.pool_stride)
                        .map_err(|e| HarnessError::Config(e.to_string()))?
                        .windows
                }
                PoolRegion::Full => {
                    let count = (s.len() + 1).saturating_sub(len + h);
                    (0..count)
                        .step_by(cfg.pool_stride)
                        .map(|start| Window::from_slice(&s.id, &s.values, start, len, h))
                        .collect()
                }
            };
            entries.entry(s.domain.clone()).or_default().extend(windows);
        }
        let mut pools = BTreeMap::new();
        for (i, (domain, windows)) in entries.into_iter().enumerate() {
            let pool = CandidatePool::new(domain.clone(), windows);
            let pool = subsample_pool(&pool, fraction, cfg.seed.wrapping_add(i as u64))
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let prepared = PreparedPool::new(pool, cfg.lag_mode).map_err(|e| HarnessError::Config(e.to_string()))?;
            pools.insert(domain, prepared);
        }
        Ok(pools)
    }

    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match self.config.workers {
            Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(f),
                Err(_) => f(),
            },
            None => f(),
        }
    }
}

/// Report plus the per-point score rows behind it.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: EvalReport,
    pub scores: BTreeMap<String, Vec<ScoreRow>>,
    pub training: BTreeMap<String, TrainingReport>,
}

struct SeriesOutcome {
    result: SeriesResult,
    rows: Vec<ScoreRow>,
}

/// Retrieves an example for a long evaluation window and assembles its context.
fn retrieval_context(
    window: &Window,
    pool: &PreparedPool,
    budget: Budget,
    observer: &dyn PipelineObserver,
) -> Result<(ContextWindow, Window), String> {
    observer.stage(&window.series_id, Stage::Retrieve);
    let query = window.with_input_suffix(budget.retrieval_input());
    let (example, _) = pool.retrieve(&query).map_err(|e| e.to_string())?;
    observer.stage(&window.series_id, Stage::Assemble);
    let ctx = assemble_context(window, example, budget).map_err(|e| e.to_string())?;
    Ok((ctx, example.clone()))
}

fn evaluate_series(
    ps: &PreparedSeries,
    cfg: &ExperimentConfig,
    setting: Setting,
    pool: Option<&PreparedPool>,
    forecaster: &dyn Forecaster,
    observer: &dyn PipelineObserver,
) -> Result<SeriesOutcome, String> {
    let s = &ps.series;
    let budget = cfg.budget;
    let (input_len, h, stride) = (budget.zero_shot_input(), budget.horizon, cfg.eval_stride());
    let windows = make_windows(s, Region::Test, input_len, h, stride).map_err(|e| e.to_string())?;
    if windows.too_short {
        return Err(format!(
            "test region of {} points cannot hold input {input_len} + horizon {h}",
            s.len() - s.train_end
        ));
    }
    let covered = (windows.windows.len() - 1) * stride + h;
    let mut sum = vec![0.0; covered];
    let mut hits = vec![0u32; covered];
    for (i, window) in windows.windows.iter().enumerate() {
        let ctx = if setting.uses_retrieval() {
            let pool = pool.ok_or_else(|| format!("no candidate pool for domain {}", s.domain))?;
            retrieval_context(window, pool, budget, observer)?.0
        } else {
            ContextWindow::zero_shot(window)
        };
        observer.stage(&s.id, Stage::Forecast);
        let predicted = forecast(forecaster, &ctx).map_err(|e| e.to_string())?;
        observer.stage(&s.id, Stage::Score);
        let raw = anomaly_scores(&predicted, &window.future).map_err(|e| e.to_string())?;
        for (j, v) in raw.scores.into_iter().enumerate() {
            sum[i * stride + j] += v;
            hits[i * stride + j] += 1;
        }
    }
    let raw: Vec<f64> = sum.iter().zip(&hits).map(|(s, &n)| s / f64::from(n)).collect();
    let raw = ScoreSeries::raw(s.id.clone(), input_len, raw);

    let period = ps.period.period;
    let final_scores = if cfg.sma {
        observer.stage(&s.id, Stage::Smooth);
        sma_smooth(&raw, period).map_err(|e| e.to_string())?
    } else {
        raw.clone()
    };
    observer.stage(&s.id, Stage::Threshold);
    let (labels, threshold) = threshold_labels(&final_scores).map_err(|e| e.to_string())?;

    observer.stage(&s.id, Stage::Metrics);
    let first = s.train_end + input_len;
    let spans = s
        .anomaly_spans
        .iter()
        .map(|sp| (sp.start as i64 - first as i64, sp.end as i64 - first as i64))
        .collect();
    let truth = GroundTruth::from_spans(covered, spans);
    if !truth.has_positive() {
        return Err("no labeled anomaly inside the scored test points".into());
    }
    let (precision, recall, f1) = pointwise_prf(&labels, &truth.labels).map_err(|e| e.to_string())?;
    let (default_w, default_steps) = default_vus_params(period);
    let (vus_roc, vus_pr) = vus(
        &final_scores.scores,
        &truth,
        cfg.vus_w_max.unwrap_or(default_w),
        cfg.vus_steps.unwrap_or(default_steps),
    )
    .map_err(|e| e.to_string())?;

    let rows = (0..covered)
        .map(|t| ScoreRow {
            series_id: s.id.clone(),
            t_absolute: first + t,
            raw_score: raw.scores[t],
            smoothed_score: final_scores.scores[t],
            label: labels[t],
            threshold,
        })
        .collect();
    Ok(SeriesOutcome {
        result: SeriesResult {
            domain: s.domain.clone(),
            metrics: MetricSet {
                f1,
                precision,
                recall,
                vus_roc,
                vus_pr,
            },
            period,
            threshold,
            scored_points: covered,
        },
        rows,
    })
}

/// Training contexts cut from the training regions of one domain.
fn domain_training_contexts(prepared: &Prepared, domain: &str, pool: &PreparedPool) -> Vec<ContextWindow> {
    let cfg = &prepared.config;
    let len = cfg.budget.retrieval_input();
    prepared
        .series
        .par_iter()
        .filter(|ps| ps.series.domain == domain)
        .map(|ps| {
            let windows = make_windows(&ps.series, Region::Train, len, cfg.horizon(), cfg.ridge_train_stride)
                .map(|w| w.windows)
                .unwrap_or_default();
            windows
                .iter()
                .filter_map(|w| {
                    let (example, _) = pool.retrieve(w).ok()?;
                    assemble_context(w, example, cfg.budget).ok()
                })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect()
}

/// Per-domain linear forecasters with their fit summaries.
#[derive(Debug, Clone, Default)]
pub struct LinearModels {
    pub models: BTreeMap<String, Arc<LinearForecaster>>,
    pub reports: BTreeMap<String, TrainingReport>,
    pub warnings: Vec<String>,
}

type Fit = Result<(LinearForecaster, TrainingReport), String>;

/// Fits one linear forecaster per evaluation domain. With leave-one-domain-out
/// each domain's model never sees that domain's series.
pub fn train_linear_models(prepared: &Prepared) -> Result<LinearModels, HarnessError> {
    let pools = prepared.pools(1.0)?;
    let domains = prepared.domains();
    let contexts: BTreeMap<String, Vec<ContextWindow>> = prepared.install(|| {
        domains
            .iter()
            .map(|d| {
                (
                    d.clone(),
                    pools
                        .get(d)
                        .map_or_else(Vec::new, |p| domain_training_contexts(prepared, d, p)),
                )
            })
            .collect()
    });
    let mut warnings = Vec::new();
    let cross_domain = prepared.config.leave_one_domain_out && domains.len() >= 2;
    if prepared.config.leave_one_domain_out && !cross_domain {
        warnings.push("single domain: linear forecaster trained in-domain".to_owned());
    }
    let fits: Vec<(String, Fit)> = prepared.install(|| {
        domains
            .par_iter()
            .map(|d| {
                let train: Vec<ContextWindow> = contexts
                    .iter()
                    .filter(|(other, _)| !cross_domain || *other != d)
                    .flat_map(|(_, c)| c.iter().cloned())
                    .collect();
                let fit = train_linear_ratfm(&train, prepared.config.ridge_reg).map_err(|e| e.to_string());
                (d.clone(), fit)
            })
            .collect()
    });
    let mut models = BTreeMap::new();
    let mut reports = BTreeMap::new();
    for (domain, fit) in fits {
        match fit {
            Ok((model, report)) => {
                info!("trained linear forecaster for {domain}: mse {:.4}", report.final_mse);
                models.insert(domain.clone(), Arc::new(model));
                reports.insert(domain, report);
            }
            Err(e) => warnings.push(format!("linear forecaster for {domain} not trained: {e}")),
        }
    }
    Ok(LinearModels {
        models,
        reports,
        warnings,
    })
}

/// Forecasters chosen per domain for one setting.
pub enum ForecasterSet {
    ZeroShot,
    Copy,
    Linear(BTreeMap<String, Arc<LinearForecaster>>),
}

impl ForecasterSet {
    fn for_series(&self, ps: &PreparedSeries) -> Result<Arc<dyn Forecaster>, String> {
        match self {
            ForecasterSet::ZeroShot => Ok(Arc::new(SeasonalNaive {
                period: ps.period.period,
            })),
            ForecasterSet::Copy => Ok(Arc::new(ExampleCopy)),
            ForecasterSet::Linear(models) => models
                .get(&ps.series.domain)
                .map(|m| m.clone() as Arc<dyn Forecaster>)
                .ok_or_else(|| format!("no trained forecaster for domain {}", ps.series.domain)),
        }
    }
}

/// Evaluates one setting with the given pools and forecasters.
pub fn evaluate(
    prepared: &Prepared,
    setting: Setting,
    pools: &BTreeMap<String, PreparedPool>,
    forecasters: &ForecasterSet,
    observer: &dyn PipelineObserver,
) -> Result<RunOutput, HarnessError> {
    let cfg = &prepared.config;
    let outcomes: Vec<(String, Result<SeriesOutcome, String>)> = prepared.install(|| {
        prepared
            .series
            .par_iter()
            .map(|ps| {
                let outcome = forecasters.for_series(ps).and_then(|f| {
                    evaluate_series(ps, cfg, setting, pools.get(&ps.series.domain), f.as_ref(), observer)
                });
                (ps.series.id.clone(), outcome)
            })
            .collect()
    });
    let mut per_series = BTreeMap::new();
    let mut scores = BTreeMap::new();
    let mut skipped = prepared.skipped.clone();
    for (id, outcome) in outcomes {
        match outcome {
            Ok(o) => {
                per_series.insert(id.clone(), o.result);
                scores.insert(id, o.rows);
            }
            Err(reason) => {
                warn!("skipping {id}: {reason}");
                skipped.push(SkippedSeries { series_id: id, reason });
            }
        }
    }
    let mut warnings = prepared.warnings.clone();
    if per_series.is_empty() {
        warnings.push("no series were evaluated".to_owned());
    }
    let bootstrap = (cfg.bootstrap_iterations > 0).then_some((cfg.bootstrap_iterations, cfg.seed));
    let report = EvalReport::assemble(setting.as_str(), per_series, skipped, warnings, bootstrap)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(RunOutput {
        report,
        scores,
        training: BTreeMap::new(),
    })
}

/// Runs one setting end to end on an already prepared dataset.
pub fn run_prepared(
    prepared: &Prepared,
    setting: Setting,
    observer: &dyn PipelineObserver,
) -> Result<RunOutput, HarnessError> {
    let pools = if setting.uses_retrieval() {
        prepared.pools(prepared.config.pool_fraction)?
    } else {
        BTreeMap::new()
    };
    let (forecasters, training, warnings) = match setting {
        Setting::ZeroShotNaive => (ForecasterSet::ZeroShot, BTreeMap::new(), Vec::new()),
        Setting::RatfmCopy => (ForecasterSet::Copy, BTreeMap::new(), Vec::new()),
        Setting::RatfmLinear => {
            let LinearModels {
                models,
                reports,
                warnings,
            } = train_linear_models(prepared)?;
            (ForecasterSet::Linear(models), reports, warnings)
        }
    };
    let mut out = evaluate(prepared, setting, &pools, &forecasters, observer)?;
    out.report.warnings.extend(warnings);
    out.training = training;
    Ok(out)
}

/// Loads the configured dataset and runs one setting.
pub fn run_setting(config: &ExperimentConfig, setting: Setting) -> Result<EvalReport, HarnessError> {
    let prepared = Prepared::new(config, load_dataset(config)?)?;
    Ok(run_prepared(&prepared, setting, &NoopObserver)?.report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub domain: String,
    pub series: usize,
    pub vus_roc: f64,
    pub vus_pr: f64,
}

/// Re-runs retrieval with subsampled pools; trained forecasters are reused.
pub fn sweep_pool_fraction(
    prepared: &Prepared,
    setting: Setting,
    fractions: &[f64],
) -> Result<Vec<SweepRow>, HarnessError> {
    if !setting.uses_retrieval() {
        return Err(HarnessError::Config(format!(
            "setting {setting} does not use retrieval"
        )));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(HarnessError::Config(format!("pool fraction {f} not in (0, 1]")));
    }
    let forecasters = match setting {
        Setting::RatfmLinear => ForecasterSet::Linear(train_linear_models(prepared)?.models),
        _ => ForecasterSet::Copy,
    };
    let mut rows = Vec::new();
    for &fraction in fractions {
        let pools = prepared.pools(fraction)?;
        let out = evaluate(prepared, setting, &pools, &forecasters, &NoopObserver)?;
        for (domain, agg) in &out.report.per_domain {
            rows.push(SweepRow {
                fraction,
                domain: domain.clone(),
                series: agg.series,
                vus_roc: agg.mean.vus_roc,
                vus_pr: agg.mean.vus_pr,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| HarnessError::io(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimilarityMeans {
    /// Retrieved example future vs the true future.
    pub example_future: f64,
    /// Input segment in the example-future position vs the true future.
    pub aligned_segment: f64,
    /// Best length-H segment of the long input vs the true future.
    pub best_segment: f64,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityDiagnostics {
    pub lag_mode: LagMode,
    pub per_domain: BTreeMap<String, SimilarityMeans>,
    pub global: SimilarityMeans,
}

#[derive(Default)]
struct SimilaritySums {
    a: f64,
    b: f64,
    c: f64,
    n: usize,
}

impl SimilaritySums {
    fn add(&mut self, other: &SimilaritySums) {
        self.a += other.a;
        self.b += other.b;
        self.c += other.c;
        self.n += other.n;
    }

    fn means(&self) -> SimilarityMeans {
        let n = self.n.max(1) as f64;
        SimilarityMeans {
            example_future: self.a / n,
            aligned_segment: self.b / n,
            best_segment: self.c / n,
            windows: self.n,
        }
    }
}

/// Similarity of the true future against the retrieved example future,
/// the aligned input segment and the best input segment.
///
/// Windows whose future or segments have zero norm are left out, as are
/// windows touching an anomaly when `diagnostics_skip_anomalous` is set.
pub fn similarity_diagnostics(prepared: &Prepared) -> Result<SimilarityDiagnostics, HarnessError> {
    let cfg = &prepared.config;
    let pools = prepared.pools(cfg.pool_fraction)?;
    let mode = cfg.diagnostics_lag_mode;
    let budget = cfg.budget;
    let (input_len, h) = (budget.zero_shot_input(), budget.horizon);
    let aligned_at = budget.example_input;

    let per_series: Vec<(String, SimilaritySums)> = prepared.install(|| {
        prepared
            .series
            .par_iter()
            .map(|ps| {
                let s = &ps.series;
                let mut sums = SimilaritySums::default();
                let Some(pool) = pools.get(&s.domain) else {
                    return (s.domain.clone(), sums);
                };
                let windows = make_windows(s, Region::Test, input_len, h, cfg.eval_stride())
                    .map(|w| w.windows)
                    .unwrap_or_default();
                for w in &windows {
                    let end = w.future_start() + h;
                    let touches = s.anomaly_spans.iter().any(|sp| sp.start < end && sp.end >= w.start);
                    if cfg.diagnostics_skip_anomalous && touches {
                        continue;
                    }
                    let Ok((_, example)) = retrieval_context(w, pool, budget, &NoopObserver) else {
                        continue;
                    };
                    let sim = |seg: &[f64]| ncc_with_mode(seg, &w.future, mode).map(|r| r.score);
                    let (Ok(a), Ok(b)) = (sim(&example.future), sim(&w.input[aligned_at..aligned_at + h])) else {
                        continue;
                    };
                    let c = (0..=input_len - h)
                        .filter_map(|start| sim(&w.input[start..start + h]).ok())
                        .fold(f64::NEG_INFINITY, f64::max);
                    sums.a += a;
                    sums.b += b;
                    sums.c += c;
                    sums.n += 1;
                }
                (s.domain.clone(), sums)
            })
            .collect()
    });
    let mut domains: BTreeMap<String, SimilaritySums> = BTreeMap::new();
    let mut global = SimilaritySums::default();
    for (domain, sums) in &per_series {
        domains.entry(domain.clone()).or_default().add(sums);
        global.add(sums);
    }
    Ok(SimilarityDiagnostics {
        lag_mode: mode,
        per_domain: domains.into_iter().map(|(d, s)| (d, s.means())).collect(),
        global: global.means(),
    })
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    fs::write(path, body).map_err(|e| HarnessError::io(path, e))
}

/// Writes `report.json`, `per_series.csv`, `scores/<id>.csv` and
/// `config.json` under `dir`, creating it if needed.
pub fn emit_reports(output: &RunOutput, config: &ExperimentConfig, dir: impl AsRef<Path>) -> Result<(), HarnessError> {
    let dir = dir.as_ref();
    let scores_dir = dir.join("scores");
    fs::create_dir_all(&scores_dir).map_err(|e| HarnessError::io(&scores_dir, e))?;
    write_file(&dir.join("report.json"), output.report.to_json())?;
    let mut csv = Vec::new();
    output
        .report
        .write_csv(&mut csv)
        .map_err(|e| HarnessError::io(&dir.join("per_series.csv"), e))?;
    write_file(&dir.join("per_series.csv"), csv)?;
    for (id, rows) in &output.scores {
        let mut buf = Vec::new();
        crate::scoring::write_score_csv(&mut buf, rows).map_err(|e| HarnessError::io(&scores_dir, e))?;
        write_file(&scores_dir.join(format!("{id}.csv")), buf)?;
    }
    if !output.training.is_empty() {
        let body = serde_json::to_string_pretty(&output.training).expect("training reports serialize");
        write_file(&dir.join("training.json"), body)?;
    }
    write_file(&dir.join("config.json"), config.to_json())
}

pub fn write_diagnostics(diag: &SimilarityDiagnostics, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let body = serde_json::to_string_pretty(diag).expect("diagnostics serialize");
    write_file(path.as_ref(), body)
}
