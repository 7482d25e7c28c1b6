//! Synthetic multi-domain benchmark in the UCR layout.
//!
//! Every domain owns one quasi-periodic template: a few harmonics of a
//! carrier whose instantaneous frequency and amplitude are modulated over a
//! long cycle of `modulation_cycles` carrier periods. The template repeats
//! exactly once per modulation cycle, so windows from other series in the
//! same domain contain matching continuations, while a one-carrier-period
//! look-back does not. Series differ by phase offset, scale, level and
//! noise, and carry exactly one anomaly in their test region.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{LabeledSeries, Span};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Spike,
    PlateauShift,
    FrequencyChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub domains: usize,
    pub series_per_domain: usize,
    pub series_len: usize,
    pub train_len: usize,
    /// Carrier periods are drawn per domain from `[min, max]` (integers).
    pub period_range: (usize, usize),
    /// Relative depth of the carrier frequency modulation, in `[0, 1)`.
    pub modulation_depth: f64,
    /// Carrier periods per modulation cycle.
    pub modulation_cycles: usize,
    pub noise_std: f64,
    pub anomaly_kinds: Vec<AnomalyKind>,
    /// Inclusive range of anomaly lengths.
    pub anomaly_len: (usize, usize),
    /// Anomaly start as a fraction of the test region.
    pub anomaly_position: (f64, f64),
    /// Draw per-series scale and level; false keeps every series at scale 1, level 0.
    pub vary_scale: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            domains: 3,
            series_per_domain: 8,
            series_len: 1600,
            train_len: 800,
            period_range: (24, 40),
            modulation_depth: 0.4,
            modulation_cycles: 7,
            noise_std: 0.05,
            anomaly_kinds: vec![
                AnomalyKind::Spike,
                AnomalyKind::PlateauShift,
                AnomalyKind::FrequencyChange,
            ],
            anomaly_len: (10, 40),
            anomaly_position: (0.45, 0.9),
            vary_scale: true,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_owned()));
        if self.domains == 0 || self.series_per_domain == 0 {
            return bad("domains and series_per_domain must be positive");
        }
        if self.train_len < 2 || self.train_len >= self.series_len {
            return bad("need 2 <= train_len < series_len");
        }
        let (pmin, pmax) = self.period_range;
        if pmin < 2 || pmin > pmax {
            return bad("period_range must satisfy 2 <= min <= max");
        }
        if !(0.0..1.0).contains(&self.modulation_depth) {
            return bad("modulation_depth must be in [0, 1)");
        }
        if self.modulation_cycles == 0 {
            return bad("modulation_cycles must be positive");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be a finite non-negative number");
        }
        if self.anomaly_kinds.is_empty() {
            return bad("at least one anomaly kind is required");
        }
        let (lmin, lmax) = self.anomaly_len;
        if lmin == 0 || lmin > lmax {
            return bad("anomaly_len must satisfy 1 <= min <= max");
        }
        let (a, b) = self.anomaly_position;
        if !(0.0 <= a && a <= b && b <= 1.0) {
            return bad("anomaly_position must satisfy 0 <= lo <= hi <= 1");
        }
        let test_len = self.series_len - self.train_len;
        if lmax > test_len {
            return bad("anomalies longer than the test region");
        }
        Ok(())
    }
}

/// Quasi-periodic domain template, evaluated at any (fractional) time.
#[derive(Debug, Clone)]
struct Template {
    period: f64,
    cycle: f64,
    depth: f64,
    harmonics: Vec<(f64, f64)>,
    envelope_phase: f64,
}

impl Template {
    fn draw(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Self {
        let (pmin, pmax) = spec.period_range;
        let period = rng.gen_range(pmin..=pmax) as f64;
        let harmonics = vec![
            (1.0, rng.gen_range(0.0..2.0 * PI)),
            (rng.gen_range(0.2..0.6), rng.gen_range(0.0..2.0 * PI)),
            (rng.gen_range(0.0..0.3), rng.gen_range(0.0..2.0 * PI)),
        ];
        Self {
            period,
            cycle: period * spec.modulation_cycles as f64,
            depth: spec.modulation_depth,
            harmonics,
            envelope_phase: rng.gen_range(0.0..2.0 * PI),
        }
    }

    /// Carrier phase; advances by exactly `2 pi * modulation_cycles` per cycle.
    fn phase(&self, t: f64) -> f64 {
        let base = t / self.period;
        let wobble = self.depth * self.cycle / (2.0 * PI * self.period) * (1.0 - (2.0 * PI * t / self.cycle).cos());
        2.0 * PI * (base + wobble)
    }

    fn envelope(&self, t: f64) -> f64 {
        1.0 + 0.25 * (2.0 * PI * t / self.cycle + self.envelope_phase).sin()
    }

    fn shape(&self, phase: f64) -> f64 {
        self.harmonics
            .iter()
            .enumerate()
            .map(|(h, &(a, theta))| a * ((h + 1) as f64 * phase + theta).sin())
            .sum()
    }

    fn value(&self, t: f64) -> f64 {
        self.envelope(t) * self.shape(self.phase(t))
    }
}

/// Domain label used for the `d`-th synthetic domain.
pub fn domain_name(d: usize) -> String {
    format!("domain{d:02}")
}

/// Generates the benchmark; identical specs give identical series.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<LabeledSeries>, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise =
        Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let test_len = spec.series_len - spec.train_len;
    let mut out = Vec::with_capacity(spec.domains * spec.series_per_domain);

    for d in 0..spec.domains {
        let template = Template::draw(spec, &mut rng);
        let domain = domain_name(d);
        for s in 0..spec.series_per_domain {
            let index = d * spec.series_per_domain + s;
            let offset = rng.gen_range(0..template.cycle as usize) as f64;
            let (scale, level) = if spec.vary_scale {
                (rng.gen_range(0.5..2.0), rng.gen_range(-3.0..3.0))
            } else {
                (1.0, 0.0)
            };
            let kind = spec.anomaly_kinds[rng.gen_range(0..spec.anomaly_kinds.len())];
            let len = rng.gen_range(spec.anomaly_len.0..=spec.anomaly_len.1);
            let (lo, hi) = spec.anomaly_position;
            let latest = test_len - len;
            let first = ((lo * test_len as f64) as usize).min(latest);
            let last = ((hi * test_len as f64) as usize).clamp(first, latest);
            let start = spec.train_len + rng.gen_range(first..=last);
            let span = Span::new(start, start + len - 1);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };

            let values: Vec<f64> = (0..spec.series_len)
                .map(|i| {
                    let t = offset + i as f64;
                    let clean = if span.contains(i) {
                        anomalous_value(&template, kind, t, offset + span.start as f64, sign)
                    } else {
                        template.value(t)
                    };
                    let eps = if spec.noise_std > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    level + scale * (clean + eps)
                })
                .collect();
            let id = format!("{index:03}_{domain}");
            out.push(
                LabeledSeries::new(id, domain.clone(), values, spec.train_len, vec![span], "")
                    .map_err(|e| SynthError::InvalidSpec(e.to_string()))?,
            );
        }
    }
    Ok(out)
}

fn anomalous_value(template: &Template, kind: AnomalyKind, t: f64, onset: f64, sign: f64) -> f64 {
    match kind {
        AnomalyKind::Spike => template.value(t) + sign * 3.0,
        AnomalyKind::PlateauShift => template.value(t) + sign * 1.5,
        AnomalyKind::FrequencyChange => {
            let base = template.phase(onset);
            let phase = base + 2.5 * (template.phase(t) - base);
            template.envelope(t) * template.shape(phase)
        }
    }
}

/// Writes `<root>/<domain>/<id>_<trainEnd>_<start>_<end>.txt`, one value per line.
pub fn write_dataset(series: &[LabeledSeries], root: impl AsRef<Path>) -> Result<(), SynthError> {
    let root = root.as_ref();
    for s in series {
        let dir = root.join(&s.domain);
        fs::create_dir_all(&dir).map_err(|e| SynthError::Io(e.to_string()))?;
        let span = s
            .anomaly_spans
            .first()
            .copied()
            .unwrap_or(Span::new(s.train_end, s.train_end));
        let name = format!("{}_{}_{}_{}.txt", s.id, s.train_end, span.start, span.end);
        let mut body = String::with_capacity(s.values.len() * 20);
        for v in &s.values {
            body.push_str(&v.to_string());
            body.push('\n');
        }
        fs::write(dir.join(name), body).map_err(|e| SynthError::Io(e.to_string()))?;
    }
    Ok(())
}
