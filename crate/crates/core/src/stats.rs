//! Monte Carlo estimates with batch-means standard errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of equal batches used for autocorrelated time averages.
pub const DEFAULT_BATCHES: usize = 20;

/// Multiplier on the standard error below which an estimate is not decisive.
pub const DECISION_Z: f64 = 3.0;

/// Mean of a Monte Carlo or ergodic-average estimator with its standard error.
///
/// `std_error` is exactly zero only for deterministic inputs or a single batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub batches: usize,
    /// Number of samples (time steps or draws) behind the estimate.
    pub n: usize,
}

impl RateEstimate {
    pub fn exact(value: f64) -> Self {
        RateEstimate {
            mean: value,
            std_error: 0.0,
            batches: 1,
            n: 1,
        }
    }

    /// Estimate from independent samples; each sample is its own batch.
    pub fn from_iid(values: &[f64]) -> Self {
        let mut acc = BatchAccumulator::iid(values.len());
        for v in values {
            acc.push(*v);
        }
        acc.finish()
    }

    /// Combines independent replicate estimates of the same quantity, in
    /// the given order.
    pub fn pool(parts: &[RateEstimate]) -> Self {
        if parts.is_empty() {
            return RateEstimate {
                mean: f64::NAN,
                std_error: f64::NAN,
                batches: 0,
                n: 0,
            };
        }
        let r = parts.len() as f64;
        let first = parts[0].mean;
        let mean = first + parts.iter().map(|p| p.mean - first).sum::<f64>() / r;
        let var: f64 = parts.iter().map(|p| p.std_error * p.std_error).sum();
        RateEstimate {
            mean,
            std_error: var.sqrt() / r,
            batches: parts.iter().map(|p| p.batches).sum(),
            n: parts.iter().map(|p| p.n).sum(),
        }
    }

    /// `mean / std_error`; `None` when the estimate is exact.
    pub fn z_score(&self) -> Option<f64> {
        if self.std_error > 0.0 {
            Some(self.mean / self.std_error)
        } else {
            None
        }
    }

    pub fn sign(&self) -> Sign {
        Sign::of(self.mean, self.std_error)
    }
}

/// Three-way decision on the sign of an estimate under the 3·SE rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
    Undecided,
}

impl Sign {
    pub fn of(mean: f64, std_error: f64) -> Sign {
        let buffer = DECISION_Z * std_error;
        if mean > buffer {
            Sign::Positive
        } else if mean < -buffer {
            Sign::Negative
        } else {
            Sign::Undecided
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Streaming batch-means accumulator for a known number of samples.
///
/// Values are accumulated as deviations from the first sample, so a constant
/// stream yields its value exactly and a zero standard error.
#[derive(Debug, Clone)]
pub struct BatchAccumulator {
    batch_size: usize,
    shift: Option<f64>,
    sums: Vec<Neumaier>,
    counts: Vec<usize>,
    seen: usize,
}

impl BatchAccumulator {
    /// Accumulator for `expected` samples split into `min(batches, expected)`
    /// equal batches (the last absorbs any remainder). Needs at least two
    /// samples.
    pub fn new(expected: usize, batches: usize) -> Result<Self> {
        if expected < 2 {
            return Err(Error::config(format!(
                "horizon too short: {expected} post-burn-in samples cannot form 2 batches"
            )));
        }
        let b = batches.clamp(2, expected);
        Ok(Self::with_batches(expected, b))
    }

    fn iid(expected: usize) -> Self {
        Self::with_batches(expected.max(1), expected.max(1))
    }

    fn with_batches(expected: usize, b: usize) -> Self {
        BatchAccumulator {
            batch_size: expected / b,
            shift: None,
            sums: vec![Neumaier::default(); b],
            counts: vec![0; b],
            seen: 0,
        }
    }

    pub fn push(&mut self, v: f64) {
        let shift = *self.shift.get_or_insert(v);
        let b = (self.seen / self.batch_size).min(self.sums.len() - 1);
        self.sums[b].add(v - shift);
        self.counts[b] += 1;
        self.seen += 1;
    }

    pub fn seen(&self) -> usize {
        self.seen
    }

    pub fn finish(&self) -> RateEstimate {
        let shift = self.shift.unwrap_or(f64::NAN);
        let n = self.seen;
        let mut total = Neumaier::default();
        for s in &self.sums {
            total.add(s.value());
        }
        let mean = shift + total.value() / n as f64;
        let used: Vec<f64> = self
            .sums
            .iter()
            .zip(&self.counts)
            .filter(|(_, c)| **c > 0)
            .map(|(s, c)| s.value() / *c as f64)
            .collect();
        let b = used.len();
        let std_error = if b < 2 {
            0.0
        } else {
            let m = used.iter().sum::<f64>() / b as f64;
            let var = used.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b - 1) as f64;
            (var / b as f64).sqrt()
        };
        RateEstimate {
            mean,
            std_error,
            batches: b,
            n,
        }
    }
}
