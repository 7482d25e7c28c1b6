//! Example-conditioned context assembly and pluggable H-step forecasters.
//!
//! A context is laid out as `[example_input, example_future, target_input]`
//! with no separator values; the forecaster predicts the `H` points that
//! follow `target_input`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Window;

#[derive(Debug, Error, PartialEq)]
pub enum ForecastError {
    #[error("budget needs {needed} points of {segment}, only {available} available")]
    BudgetExceedsAvailable {
        segment: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("seasonal period {period} exceeds target input length {available}")]
    PeriodTooLong { period: usize, available: usize },
    #[error("forecaster `{forecaster}` cannot consume this context: {reason}")]
    ModeMismatch { forecaster: String, reason: String },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training context {0} has no target future")]
    MissingTarget(usize),
    #[error("normal equations are rank-deficient; use a positive regularizer")]
    SingularSystem,
    #[error("invalid regularizer {0}")]
    InvalidRegularizer(f64),
    #[error("forecast contains non-finite values")]
    NonFinite,
    #[error("model file error: {0}")]
    Model(String),
}

/// Segment lengths `(example input, horizon, target input)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub example_input: usize,
    pub horizon: usize,
    pub target_input: usize,
}

impl Budget {
    pub const fn new(example_input: usize, horizon: usize, target_input: usize) -> Self {
        Self {
            example_input,
            horizon,
            target_input,
        }
    }

    /// Flattened context length `Te + H + Tt`.
    pub fn total(&self) -> usize {
        self.example_input + self.horizon + self.target_input
    }

    /// Input length of the long zero-shot window covering the same budget.
    pub fn zero_shot_input(&self) -> usize {
        self.total()
    }

    /// Input length used when matching a query against pool candidates.
    pub fn retrieval_input(&self) -> usize {
        self.example_input.max(self.target_input)
    }
}

impl Default for Budget {
    fn default() -> Self {
        Self::new(512, 96, 512)
    }
}

impl std::str::FromStr for Budget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("budget `{s}`: {e}"))?;
        match parts[..] {
            [te, h, tt] if h > 0 && tt > 0 => Ok(Self::new(te, h, tt)),
            _ => Err(format!("budget `{s}` must be Te,H,Tt with H, Tt > 0")),
        }
    }
}

/// Assembled forecaster input. Zero-shot contexts have empty example segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub example_input: Vec<f64>,
    pub example_future: Vec<f64>,
    pub target_input: Vec<f64>,
    pub target_future: Option<Vec<f64>>,
    pub horizon: usize,
}

impl ContextWindow {
    /// A context with no example, for zero-shot forecasters.
    pub fn zero_shot(target: &Window) -> Self {
        Self {
            example_input: Vec::new(),
            example_future: Vec::new(),
            target_input: target.input.clone(),
            target_future: Some(target.future.clone()),
            horizon: target.future.len(),
        }
    }

    pub fn has_example(&self) -> bool {
        !self.example_future.is_empty()
    }

    /// End offsets of the three segments in the flattened context.
    pub fn boundaries(&self) -> [usize; 3] {
        let a = self.example_input.len();
        let b = a + self.example_future.len();
        [a, b, b + self.target_input.len()]
    }

    pub fn len(&self) -> usize {
        self.boundaries()[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn budget(&self) -> Budget {
        Budget::new(self.example_input.len(), self.horizon, self.target_input.len())
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.example_input);
        out.extend_from_slice(&self.example_future);
        out.extend_from_slice(&self.target_input);
        out
    }
}

/// Builds `[example_input, example_future, target_input]` from the last
/// `Te` example points and the last `Tt` target points.
pub fn assemble_context(target: &Window, example: &Window, budget: Budget) -> Result<ContextWindow, ForecastError> {
    let Budget {
        example_input: te,
        horizon: h,
        target_input: tt,
    } = budget;
    if example.input.len() < te {
        return Err(ForecastError::BudgetExceedsAvailable {
            segment: "example input",
            needed: te,
            available: example.input.len(),
        });
    }
    if example.future.len() != h {
        return Err(ForecastError::BudgetExceedsAvailable {
            segment: "example future",
            needed: h,
            available: example.future.len(),
        });
    }
    if target.input.len() < tt {
        return Err(ForecastError::BudgetExceedsAvailable {
            segment: "target input",
            needed: tt,
            available: target.input.len(),
        });
    }
    let target_future = if target.future.is_empty() {
        None
    } else {
        Some(target.future.clone())
    };
    Ok(ContextWindow {
        example_input: example.input[example.input.len() - te..].to_vec(),
        example_future: example.future.clone(),
        target_input: target.input[target.input.len() - tt..].to_vec(),
        target_future,
        horizon: h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    ZeroShot,
    Ratfm,
}

pub trait Forecaster: Send + Sync {
    fn name(&self) -> &str;

    fn mode(&self) -> ForecastMode;

    /// Raw H-step prediction. Callers go through [`forecast`], which checks
    /// the context against the mode first.
    fn predict(&self, ctx: &ContextWindow) -> Result<Vec<f64>, ForecastError>;
}

/// Runs a forecaster after checking the context fits its mode.
pub fn forecast(forecaster: &dyn Forecaster, ctx: &ContextWindow) -> Result<Vec<f64>, ForecastError> {
    if forecaster.mode() == ForecastMode::Ratfm && !ctx.has_example() {
        return Err(ForecastError::ModeMismatch {
            forecaster: forecaster.name().to_owned(),
            reason: "context carries no retrieved example".into(),
        });
    }
    let out = forecaster.predict(ctx)?;
    if out.len() != ctx.horizon {
        return Err(ForecastError::ModeMismatch {
            forecaster: forecaster.name().to_owned(),
            reason: format!("produced {} points for horizon {}", out.len(), ctx.horizon),
        });
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ForecastError::NonFinite);
    }
    Ok(out)
}

/// Predicts the retrieved example's future verbatim.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExampleCopy;

impl Forecaster for ExampleCopy {
    fn name(&self) -> &str {
        "example_copy"
    }

    fn mode(&self) -> ForecastMode {
        ForecastMode::Ratfm
    }

    fn predict(&self, ctx: &ContextWindow) -> Result<Vec<f64>, ForecastError> {
        Ok(forecast_example_copy(ctx))
    }
}

pub fn forecast_example_copy(ctx: &ContextWindow) -> Vec<f64> {
    ctx.example_future.clone()
}

/// Repeats the last `period` target points.
#[derive(Debug, Clone, Copy)]
pub struct SeasonalNaive {
    pub period: usize,
}

impl Forecaster for SeasonalNaive {
    fn name(&self) -> &str {
        "seasonal_naive"
    }

    fn mode(&self) -> ForecastMode {
        ForecastMode::ZeroShot
    }

    fn predict(&self, ctx: &ContextWindow) -> Result<Vec<f64>, ForecastError> {
        forecast_seasonal_naive(ctx, self.period)
    }
}

/// `out[t] = target_input[Tt - period + (t mod period)]`.
pub fn forecast_seasonal_naive(ctx: &ContextWindow, period: usize) -> Result<Vec<f64>, ForecastError> {
    let tt = ctx.target_input.len();
    if period == 0 || period > tt {
        return Err(ForecastError::PeriodTooLong { period, available: tt });
    }
    let base = tt - period;
    Ok((0..ctx.horizon).map(|t| ctx.target_input[base + t % period]).collect())
}

/// Affine map from the flattened context to the horizon, fitted by ridge.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearForecaster {
    budget: Budget,
    /// `H x (Te + H + Tt)`.
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: usize,
    pub final_mse: f64,
    pub loss_curve: Vec<f64>,
}

pub const MODEL_FORMAT: &str = "ratad-linear-forecaster";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    budget: Budget,
    /// Row-major `H x (Te + H + Tt + 1)`, bias in the last column.
    weights: Vec<Vec<f64>>,
}

impl LinearForecaster {
    pub fn budget(&self) -> Budget {
        self.budget
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    /// Builds a forecaster from an `H x (D + 1)` matrix with bias last.
    pub fn from_augmented(budget: Budget, augmented: &[Vec<f64>]) -> Result<Self, ForecastError> {
        let d = budget.total();
        if augmented.len() != budget.horizon || augmented.iter().any(|r| r.len() != d + 1) {
            return Err(ForecastError::Model(format!(
                "expected {} rows of {} columns",
                budget.horizon,
                d + 1
            )));
        }
        let weights = DMatrix::from_fn(budget.horizon, d, |r, c| augmented[r][c]);
        let bias = DVector::from_fn(budget.horizon, |r, _| augmented[r][d]);
        Ok(Self { budget, weights, bias })
    }

    pub fn to_augmented(&self) -> Vec<Vec<f64>> {
        (0..self.weights.nrows())
            .map(|r| {
                let mut row: Vec<f64> = self.weights.row(r).iter().copied().collect();
                row.push(self.bias[r]);
                row
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            budget: self.budget,
            weights: self.to_augmented(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ForecastError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| ForecastError::Model(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(ForecastError::Model(format!(
                "unsupported model {} v{}",
                file.format, file.version
            )));
        }
        Self::from_augmented(file.budget, &file.weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ForecastError> {
        fs::write(path, self.to_json()).map_err(|e| ForecastError::Model(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ForecastError> {
        let text = fs::read_to_string(path).map_err(|e| ForecastError::Model(e.to_string()))?;
        Self::from_json(&text)
    }

    fn apply(&self, flat: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(flat);
        (&self.weights * x + &self.bias).iter().copied().collect()
    }
}

impl Forecaster for LinearForecaster {
    fn name(&self) -> &str {
        "linear_ratfm"
    }

    fn mode(&self) -> ForecastMode {
        ForecastMode::Ratfm
    }

    fn predict(&self, ctx: &ContextWindow) -> Result<Vec<f64>, ForecastError> {
        if ctx.budget() != self.budget {
            return Err(ForecastError::ModeMismatch {
                forecaster: self.name().to_owned(),
                reason: format!(
                    "context layout {:?} differs from trained {:?}",
                    ctx.budget(),
                    self.budget
                ),
            });
        }
        Ok(self.apply(&ctx.flatten()))
    }
}

fn training_matrices(contexts: &[ContextWindow]) -> Result<(Budget, DMatrix<f64>, DMatrix<f64>), ForecastError> {
    let first = contexts.first().ok_or(ForecastError::EmptyTrainingSet)?;
    let budget = first.budget();
    let (d, h) = (budget.total(), budget.horizon);
    let n = contexts.len();
    let mut x = DMatrix::zeros(n, d);
    let mut y = DMatrix::zeros(n, h);
    for (i, ctx) in contexts.iter().enumerate() {
        if ctx.budget() != budget {
            return Err(ForecastError::ModeMismatch {
                forecaster: "linear_ratfm".into(),
                reason: format!("context {i} layout {:?} differs from {:?}", ctx.budget(), budget),
            });
        }
        let target = ctx.target_future.as_ref().ok_or(ForecastError::MissingTarget(i))?;
        if target.len() != h {
            return Err(ForecastError::MissingTarget(i));
        }
        for (j, v) in ctx.flatten().into_iter().enumerate() {
            x[(i, j)] = v;
        }
        for (j, &v) in target.iter().enumerate() {
            y[(i, j)] = v;
        }
    }
    Ok((budget, x, y))
}

/// Ridge objective `sum ||W x + b - y||^2 + reg ||W||_F^2`, bias unpenalized.
pub fn ridge_objective(model: &LinearForecaster, contexts: &[ContextWindow], reg: f64) -> Result<f64, ForecastError> {
    let mut total = 0.0;
    for (i, ctx) in contexts.iter().enumerate() {
        let target = ctx.target_future.as_ref().ok_or(ForecastError::MissingTarget(i))?;
        let pred = model.predict(ctx)?;
        total += pred.iter().zip(target).map(|(p, y)| (p - y).powi(2)).sum::<f64>();
    }
    Ok(total + reg * model.weights.norm_squared())
}

/// Fits the affine context-to-future map by ridge-regularized least squares.
///
/// `final_mse` is the minimized objective divided by the number of contexts;
/// `loss_curve` holds that quantity for the bias-only starting point and the
/// closed-form solution.
pub fn train_linear_ratfm(
    train_contexts: &[ContextWindow],
    reg: f64,
) -> Result<(LinearForecaster, TrainingReport), ForecastError> {
    if !(reg >= 0.0 && reg.is_finite()) {
        return Err(ForecastError::InvalidRegularizer(reg));
    }
    let (budget, x, y) = training_matrices(train_contexts)?;
    let n = x.nrows() as f64;
    let d = x.ncols();

    // Centering removes the bias from the penalized system.
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let mut yc = y.clone();
    for mut row in yc.row_iter_mut() {
        row -= &y_mean;
    }

    let mut gram = xc.transpose() * &xc;
    for i in 0..d {
        gram[(i, i)] += reg;
    }
    let rhs = xc.transpose() * &yc;
    let weights_t = solve_spd(gram, rhs, reg)?;
    let weights = weights_t.transpose();
    let bias = (y_mean - &x_mean * weights.transpose()).transpose();

    let model = LinearForecaster { budget, weights, bias };
    let start = yc.norm_squared() / n;
    let final_mse = ridge_objective(&model, train_contexts, reg)? / n;
    Ok((
        model,
        TrainingReport {
            epochs: 1,
            final_mse,
            loss_curve: vec![start, final_mse],
        },
    ))
}

/// Solves `A X = B` for symmetric positive (semi)definite `A`.
fn solve_spd(a: DMatrix<f64>, b: DMatrix<f64>, reg: f64) -> Result<DMatrix<f64>, ForecastError> {
    let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
    let chol = a.clone().cholesky().ok_or(ForecastError::SingularSystem)?;
    if reg == 0.0 {
        // Cholesky can succeed on a numerically singular Gram matrix; reject tiny pivots.
        let min_pivot = chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v * v));
        if min_pivot <= 1e-10 * scale {
            return Err(ForecastError::SingularSystem);
        }
    }
    Ok(chol.solve(&b))
}
