use serde::Serialize;

use super::sign_word;
use crate::env::{make_stream, EnvSpec};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::stats::RateEstimate;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RpsReport {
    pub d: f64,
    /// `E[ln(1 - d + d alpha/beta)] + E[ln(1 - d + d gamma/beta)]`.
    pub exact_lhs: RateEstimate,
    /// `E[alpha/beta] + E[gamma/beta] - 2`.
    pub small_d_lhs: RateEstimate,
    pub exact_verdict: &'static str,
    pub small_d_verdict: &'static str,
}

/// Monte Carlo estimates of both sides of the rock-paper-scissors
/// persistence condition from `n` independent `(alpha, beta, gamma)` draws.
/// Both are compared against zero with the 3·SE rule; "positive" means the
/// condition holds, "negative" that it fails.
pub fn rps_condition(model: &ModelSpec, env: &EnvSpec, n: usize, seed: u64) -> Result<RpsReport> {
    let ModelSpec::RpsLottery { d, .. } = model else {
        return Err(Error::config(format!(
            "rps condition needs rps_lottery, got {}",
            model.name()
        )));
    };
    if n == 0 {
        return Err(Error::config("rps condition needs at least one draw"));
    }
    model.validate(env.dim())?;
    let sampler = env.sampler()?;
    let mut stream = make_stream(seed, 0);
    let mut omega = vec![0.0; sampler.dim()];
    let mut exact = Vec::with_capacity(n);
    let mut small = Vec::with_capacity(n);
    for _ in 0..n {
        sampler.sample_into(&mut stream, &mut omega);
        let [a, b, g] = model.rps_draw(&omega)?;
        exact.push((1.0 - d + d * a / b).ln() + (1.0 - d + d * g / b).ln());
        small.push(a / b + g / b - 2.0);
    }
    let exact_lhs = RateEstimate::from_iid(&exact);
    let small_d_lhs = RateEstimate::from_iid(&small);
    Ok(RpsReport {
        d: *d,
        exact_verdict: sign_word(exact_lhs.sign()),
        small_d_verdict: sign_word(small_d_lhs.sign()),
        exact_lhs,
        small_d_lhs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaylorReport {
    pub species: usize,
    pub d: f64,
    /// `-d + d mean_x E[xi_i / sum_j x_j xi_j]`.
    pub estimate: RateEstimate,
    pub face_samples: usize,
    pub inner_draws: usize,
    pub warning: Option<String>,
}

/// First-order (small `d`) invasion rate of species `i` in the lottery
/// model against the boundary states `face_samples`:
/// `-d + d * (1/S) sum_s E[xi^i / sum_j x_sj xi^j]`, with the inner
/// expectation from `inner` independent draws per sample. The standard
/// error treats the per-sample values as independent.
pub fn lottery_taylor_rate(
    model: &ModelSpec,
    env: &EnvSpec,
    species: usize,
    face_samples: &[Vec<f64>],
    inner: usize,
    seed: u64,
) -> Result<TaylorReport> {
    let ModelSpec::Lottery { d, fecundity } = model else {
        return Err(Error::config(format!(
            "lottery taylor rate needs lottery, got {}",
            model.name()
        )));
    };
    if species >= fecundity.len() {
        return Err(Error::config(format!("species {species} out of range")));
    }
    if face_samples.is_empty() || inner == 0 {
        return Err(Error::config("need face samples and inner draws"));
    }
    model.validate(env.dim())?;
    let sampler = env.sampler()?;
    let inner = if env.is_deterministic() { 1 } else { inner };
    let stream = make_stream(seed, 0);
    let mut omega = vec![0.0; sampler.dim()];
    let mut values = Vec::with_capacity(face_samples.len());
    for (j, x) in face_samples.iter().enumerate() {
        if x.len() != fecundity.len() {
            return Err(Error::config("face sample has the wrong dimension"));
        }
        let mut s = stream.substream(j as u64);
        let mut total = 0.0;
        for _ in 0..inner {
            sampler.sample_into(&mut s, &mut omega);
            let denom: f64 = x.iter().zip(fecundity).map(|(xj, w)| xj * w.get(&omega)).sum();
            total += fecundity[species].get(&omega) / denom;
        }
        values.push(-d + d * total / inner as f64);
    }
    let warning = (*d > 0.2).then(|| format!("d = {d} is large; the first-order term may mislead"));
    Ok(TaylorReport {
        species,
        d: *d,
        estimate: RateEstimate::from_iid(&values),
        face_samples: face_samples.len(),
        inner_draws: inner,
        warning,
    })
}

/// Convenience for reports: the sign of an estimate as a word.
pub fn verdict_word(e: &RateEstimate) -> &'static str {
    sign_word(e.sign())
}
