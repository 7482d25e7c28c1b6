//! Retrieval-augmented, forecast-based anomaly detection for univariate
//! time series.
//!
//! The pipeline retrieves a similar `(input, future)` example from other
//! series of the same domain, forecasts the target's next `H` points from
//! `[example input, example future, target input]`, scores each point by its
//! absolute forecast error, smooths the scores with a moving average over the
//! estimated period and evaluates with point-wise F1 and VUS-ROC / VUS-PR.

pub mod dataset;
pub mod forecast;
pub mod harness;
pub mod metrics;
pub mod retrieval;
pub mod scoring;
pub mod synth;

pub use dataset::{LabeledSeries, Region, Span, StandardizationParams, Window};
pub use forecast::{Budget, ContextWindow, Forecaster};
pub use harness::{ExperimentConfig, Setting};
pub use metrics::{EvalReport, GroundTruth};
pub use retrieval::{CandidatePool, LagMode, SimilarityResult};
pub use scoring::{PeriodEstimate, ScoreSeries};
