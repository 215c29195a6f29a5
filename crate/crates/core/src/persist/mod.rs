//! Criterion checkers: the scalar trichotomy, drift conditions for
//! boundedness, boundary invasion rates and permanence, and the closed-form
//! lottery / rock-paper-scissors conditions.
//!
//! Every decision uses the 3·SE rule of [`Sign`]: a quantity counts as
//! positive or negative only when its estimate clears three standard errors.

mod conditions;
mod drift;
mod invasion;
mod scalar;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::env::{make_stream, EnvSpec, Stream};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::stats::{RateEstimate, Sign};

pub use conditions::{lottery_taylor_rate, rps_condition, verdict_word, RpsReport, TaylorReport};
pub use drift::{
    coupled_dominance, drift_bounded_check, drift_ergodic_check, DominanceReport,
    DriftConstruction, DriftErgodicReport, DriftReport, VFunction,
};
pub use invasion::{
    boundary_invasion_report, face_samples, find_persistence_weights, invasion_rate, InvasionRow,
    InvasionTable, PermanenceVerdict, RowSource, RowStatus, WeightSearch,
};
pub use scalar::{scalar_classify, ClassifyOptions};

/// Smallest sample count accepted by [`mean_percapita_growth_at`].
pub const MIN_GROWTH_DRAWS: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Extinction,
    Explosion,
    Persistent,
    Inconclusive,
}

/// One named piece of evidence behind a verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Evidence {
    Estimate(RateEstimate),
    /// A value known analytically without sampling error, e.g. `"-inf"`.
    Symbolic(String),
    Number(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub evidence: BTreeMap<String, Evidence>,
    /// Smallest `|mean| / std_error` among the estimates the decision rests
    /// on; `None` when they are all exact.
    pub decision_margin: Option<f64>,
}

/// `lambda_i(x) = E[ln f_i(x, xi)]` for every species at once, from `n`
/// independent draws of one stream.
pub(crate) fn growth_rates_at(
    model: &ModelSpec,
    env: &EnvSpec,
    x: &[f64],
    n: usize,
    mut stream: Stream,
) -> Result<Vec<RateEstimate>> {
    if x.len() != model.dim() {
        return Err(Error::config(format!(
            "state has dimension {} but {} expects {}",
            x.len(),
            model.name(),
            model.dim()
        )));
    }
    model.validate(env.dim())?;
    let sampler = env.sampler()?;
    let species = if model.is_structured() { 1 } else { model.dim() };
    let mut omega = vec![0.0; sampler.dim()];
    let mut logf = vec![0.0; model.dim()];
    let mut values = vec![Vec::with_capacity(n); species];
    for _ in 0..n {
        sampler.sample_into(&mut stream, &mut omega);
        if model.is_structured() {
            logf[0] = model.percapita_growth(x, &omega, 0)?.ln();
        } else {
            model.log_factors(x, &omega, &mut logf)?;
        }
        for (v, l) in values.iter_mut().zip(&logf) {
            v.push(*l);
        }
    }
    Ok(values.iter().map(|v| RateEstimate::from_iid(v)).collect())
}

/// Monte Carlo estimate of `lambda_i(x) = E[ln f_i(x, xi)]` from `n`
/// independent draws.
pub fn mean_percapita_growth_at(
    model: &ModelSpec,
    env: &EnvSpec,
    x: &[f64],
    i: usize,
    n: usize,
    seed: u64,
) -> Result<RateEstimate> {
    if n < MIN_GROWTH_DRAWS {
        return Err(Error::config(format!(
            "need at least {MIN_GROWTH_DRAWS} draws, got {n}"
        )));
    }
    let species = if model.is_structured() { 1 } else { model.dim() };
    if i >= species {
        return Err(Error::config(format!(
            "species index {i} out of range for {}",
            model.name()
        )));
    }
    Ok(growth_rates_at(model, env, x, n, make_stream(seed, 0))?.swap_remove(i))
}

/// `|mean| / std_error`, or `None` for an exact estimate.
pub(crate) fn margin(e: &RateEstimate) -> Option<f64> {
    (e.std_error > 0.0).then(|| e.mean.abs() / e.std_error)
}

pub(crate) fn sign_word(s: Sign) -> &'static str {
    match s {
        Sign::Positive => "positive",
        Sign::Negative => "negative",
        Sign::Undecided => "inconclusive",
    }
}
