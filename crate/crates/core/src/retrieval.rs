//! Example retrieval by normalized cross-correlation.
//!
//! Similarity between two equal-length vectors is the zero-padded
//! cross-correlation sequence divided by the product of Euclidean norms,
//! maximised over lags (the k-Shape convention). Lag `k` pairs `x[i + k]`
//! with `y[i]`, so `x = [1, 0, 0]`, `y = [0, 1, 0]` peaks at `k = -1`.

use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Window;

/// Values closer than this (in normalized units) count as ties.
const TIE_TOLERANCE: f64 = 1e-12;

/// Below this length the direct sum beats the FFT round trip.
const DIRECT_SUM_MAX_LEN: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("vectors have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("vectors must have at least two points, got {0}")]
    TooShort(usize),
    #[error("vector has zero Euclidean norm")]
    ZeroNormVector,
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("candidate {index} has input length {found}, query has {expected}")]
    InconsistentWindowLength {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("pool fraction must be in (0, 1], got {0}")]
    InvalidFraction(f64),
}

/// Whether similarity scans every lag or only the aligned one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagMode {
    #[default]
    MaxOverLags,
    ZeroLagOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityResult {
    pub score: f64,
    pub best_lag: i64,
    pub candidate_index: usize,
}

/// Windows from other same-domain series that may serve as examples.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub domain: String,
    pub entries: Vec<Window>,
    pub fraction: f64,
    pub seed: u64,
}

impl CandidatePool {
    pub fn new(domain: impl Into<String>, entries: Vec<Window>) -> Self {
        Self {
            domain: domain.into(),
            entries,
            fraction: 1.0,
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(f64, f64), RetrievalError> {
    if x.len() != y.len() {
        return Err(RetrievalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(RetrievalError::TooShort(x.len()));
    }
    let (nx, ny) = (norm(x), norm(y));
    if nx == 0.0 || ny == 0.0 {
        return Err(RetrievalError::ZeroNormVector);
    }
    Ok((nx, ny))
}

/// Lags in tie-break order: 0, -1, 1, -2, 2, ...
fn lag_order(len: usize) -> impl Iterator<Item = i64> {
    let max = len as i64 - 1;
    std::iter::once(0).chain((1..=max).flat_map(|m| [-m, m]))
}

/// Picks the best lag from a correlation lookup, honouring tie-breaking.
fn best_over_lags(len: usize, mode: LagMode, corr: impl Fn(i64) -> f64) -> (f64, i64) {
    let mut best = (corr(0), 0);
    if mode == LagMode::ZeroLagOnly {
        return best;
    }
    for lag in lag_order(len).skip(1) {
        let value = corr(lag);
        if value > best.0 + TIE_TOLERANCE {
            best = (value, lag);
        }
    }
    best
}

fn clamp_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// Normalized cross-correlation maximised over all lags.
pub fn ncc_max(x: &[f64], y: &[f64]) -> Result<SimilarityResult, RetrievalError> {
    ncc_with_mode(x, y, LagMode::MaxOverLags)
}

pub fn ncc_with_mode(x: &[f64], y: &[f64], mode: LagMode) -> Result<SimilarityResult, RetrievalError> {
    if x.len() <= DIRECT_SUM_MAX_LEN || mode == LagMode::ZeroLagOnly {
        ncc_direct(x, y, mode)
    } else {
        ncc_fft(x, y, mode)
    }
}

/// O(L²) evaluation of every lag.
pub fn ncc_direct(x: &[f64], y: &[f64], mode: LagMode) -> Result<SimilarityResult, RetrievalError> {
    let (nx, ny) = check_pair(x, y)?;
    let len = x.len();
    let scale = nx * ny;
    let (score, best_lag) = best_over_lags(len, mode, |lag| {
        let (xs, ys) = if lag >= 0 {
            (&x[lag as usize..], &y[..len - lag as usize])
        } else {
            (&x[..len - (-lag) as usize], &y[(-lag) as usize..])
        };
        xs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / scale
    });
    Ok(SimilarityResult {
        score: clamp_unit(score),
        best_lag,
        candidate_index: 0,
    })
}

/// FFT evaluation of every lag.
pub fn ncc_fft(x: &[f64], y: &[f64], mode: LagMode) -> Result<SimilarityResult, RetrievalError> {
    check_pair(x, y)?;
    let correlator = Correlator::new(x.len());
    let sx = correlator.spectrum(x);
    let sy = correlator.spectrum(y);
    correlator.ncc(&sx, &sy, mode).ok_or(RetrievalError::ZeroNormVector)
}

/// Spectrum of a zero-padded vector plus its norm.
#[derive(Debug, Clone)]
pub struct Spectrum {
    bins: Vec<Complex64>,
    norm: f64,
}

impl Spectrum {
    pub fn norm(&self) -> f64 {
        self.norm
    }
}

/// FFT plans sized for correlating vectors of one fixed length.
#[derive(Clone)]
pub struct Correlator {
    len: usize,
    padded: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Correlator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Correlator")
            .field("len", &self.len)
            .field("padded", &self.padded)
            .finish()
    }
}

impl Correlator {
    pub fn new(len: usize) -> Self {
        let padded = (2 * len.max(1) - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        Self {
            len,
            padded,
            forward: planner.plan_fft_forward(padded),
            inverse: planner.plan_fft_inverse(padded),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn spectrum(&self, v: &[f64]) -> Spectrum {
        debug_assert_eq!(v.len(), self.len);
        let mut bins: Vec<Complex64> = v.iter().map(|&re| Complex64::new(re, 0.0)).collect();
        bins.resize(self.padded, Complex64::new(0.0, 0.0));
        self.forward.process(&mut bins);
        Spectrum { bins, norm: norm(v) }
    }

    /// Returns `None` when either vector has zero norm.
    pub fn ncc(&self, x: &Spectrum, y: &Spectrum, mode: LagMode) -> Option<SimilarityResult> {
        if x.norm == 0.0 || y.norm == 0.0 {
            return None;
        }
        let mut cross: Vec<Complex64> = x.bins.iter().zip(&y.bins).map(|(a, b)| a * b.conj()).collect();
        self.inverse.process(&mut cross);
        let scale = x.norm * y.norm * self.padded as f64;
        let padded = self.padded as i64;
        let (score, best_lag) = best_over_lags(self.len, mode, |lag| cross[lag.rem_euclid(padded) as usize].re / scale);
        Some(SimilarityResult {
            score: clamp_unit(score),
            best_lag,
            candidate_index: 0,
        })
    }
}

/// A pool with every candidate spectrum computed once, for repeated queries.
#[derive(Debug, Clone)]
pub struct PreparedPool {
    pool: CandidatePool,
    mode: LagMode,
    correlator: Option<Correlator>,
    spectra: Vec<Spectrum>,
}

impl PreparedPool {
    pub fn new(pool: CandidatePool, mode: LagMode) -> Result<Self, RetrievalError> {
        let Some(first) = pool.entries.first() else {
            return Ok(Self {
                pool,
                mode,
                correlator: None,
                spectra: Vec::new(),
            });
        };
        let len = first.input.len();
        if let Some((index, w)) = pool.entries.iter().enumerate().find(|(_, w)| w.input.len() != len) {
            return Err(RetrievalError::InconsistentWindowLength {
                index,
                expected: len,
                found: w.input.len(),
            });
        }
        let correlator = Correlator::new(len);
        let spectra = pool.entries.iter().map(|w| correlator.spectrum(&w.input)).collect();
        Ok(Self {
            pool,
            mode,
            correlator: Some(correlator),
            spectra,
        })
    }

    pub fn pool(&self) -> &CandidatePool {
        &self.pool
    }

    /// Best candidate from a series other than the query's own.
    pub fn retrieve(&self, query: &Window) -> Result<(&Window, SimilarityResult), RetrievalError> {
        let correlator = self.correlator.as_ref().ok_or(RetrievalError::EmptyPool)?;
        if query.input.len() != correlator.len() {
            return Err(RetrievalError::InconsistentWindowLength {
                index: 0,
                expected: query.input.len(),
                found: correlator.len(),
            });
        }
        if query.input.len() < 2 {
            return Err(RetrievalError::TooShort(query.input.len()));
        }
        let q = correlator.spectrum(&query.input);
        if q.norm == 0.0 {
            return Err(RetrievalError::ZeroNormVector);
        }
        let mut best: Option<SimilarityResult> = None;
        for (index, (entry, spectrum)) in self.pool.entries.iter().zip(&self.spectra).enumerate() {
            if entry.series_id == query.series_id {
                continue;
            }
            let Some(mut sim) = correlator.ncc(&q, spectrum, self.mode) else {
                continue;
            };
            sim.candidate_index = index;
            if best.is_none_or(|b| sim.score > b.score) {
                best = Some(sim);
            }
        }
        let best = best.ok_or(RetrievalError::EmptyPool)?;
        Ok((&self.pool.entries[best.candidate_index], best))
    }
}

/// Returns the pool entry whose input is most similar to the query input.
///
/// Ties go to the lowest candidate index. Entries from the query's own
/// series and zero-norm entries are never returned.
pub fn retrieve_best(query: &Window, pool: &CandidatePool) -> Result<(Window, SimilarityResult), RetrievalError> {
    retrieve_best_with_mode(query, pool, LagMode::MaxOverLags)
}

pub fn retrieve_best_with_mode(
    query: &Window,
    pool: &CandidatePool,
    mode: LagMode,
) -> Result<(Window, SimilarityResult), RetrievalError> {
    if pool.entries.is_empty() {
        return Err(RetrievalError::EmptyPool);
    }
    for (index, w) in pool.entries.iter().enumerate() {
        if w.input.len() != query.input.len() {
            return Err(RetrievalError::InconsistentWindowLength {
                index,
                expected: query.input.len(),
                found: w.input.len(),
            });
        }
    }
    let prepared = PreparedPool::new(pool.clone(), mode)?;
    let (window, sim) = prepared.retrieve(query)?;
    Ok((window.clone(), sim))
}

/// Uniform sample without replacement of `ceil(fraction * N)` entries,
/// kept in original order.
pub fn subsample_pool(pool: &CandidatePool, fraction: f64, seed: u64) -> Result<CandidatePool, RetrievalError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(RetrievalError::InvalidFraction(fraction));
    }
    let n = pool.entries.len();
    let keep = subsample_size(n, fraction);
    let entries = if keep >= n {
        pool.entries.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, n, keep).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| pool.entries[i].clone()).collect()
    };
    Ok(CandidatePool {
        domain: pool.domain.clone(),
        entries,
        fraction: pool.fraction * fraction,
        seed,
    })
}

/// `ceil(fraction * n)`, at least one for a non-empty pool.
pub fn subsample_size(n: usize, fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    // Guard against 0.7 * 100 = 70.00000000000001 style rounding.
    let raw = fraction * n as f64;
    let keep = (raw - 1e-9 * raw.max(1.0)).ceil() as usize;
    keep.clamp(1, n)
}
