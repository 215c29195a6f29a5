use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::SetDescriptor;
use crate::env::{make_stream, EnvSampler, EnvSpec, Stream};
use crate::error::{Error, Result};
use crate::models::{ModelSpec, StochasticMap};
use crate::stats::{RateEstimate, Sign};

/// A shipped `(V, alpha, beta)` triple for the boundedness drift condition
/// `V(F(x, w)) <= alpha(w) V(x) + beta(w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "construction", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftConstruction {
    /// Scalar model with `f` decreasing in `x`: `V(x) = x`,
    /// `alpha = f(M, w)`, `beta = f(0, w) M`. Without `m`, the smallest
    /// `M = 2^j` with `E[ln f(M, xi)] <= -epsilon` (at 3·SE) is used.
    ScalarDecreasing {
        #[serde(default)]
        m: Option<f64>,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    /// Two-species Ricker competition: `V(x) = x1 + x2`, `alpha = 1/2`,
    /// `beta = e^(r1 - 1) + e^(r2 - 1)` (from `x e^(r - x) <= e^(r - 1)`).
    RickerCompetitionSum,
    /// `V(x) = sum_i x_i` with constant `alpha` and `beta`.
    Constant { alpha: f64, beta: f64 },
}

fn default_epsilon() -> f64 {
    0.05
}

impl DriftConstruction {
    pub fn name(&self) -> &'static str {
        match self {
            DriftConstruction::ScalarDecreasing { .. } => "scalar_decreasing",
            DriftConstruction::RickerCompetitionSum => "ricker_competition_sum",
            DriftConstruction::Constant { .. } => "constant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub construction: &'static str,
    pub m: Option<f64>,
    pub samples: usize,
    pub e_log_alpha: RateEstimate,
    pub e_log_plus_alpha: RateEstimate,
    pub e_log_plus_beta: RateEstimate,
    /// Always zero in a returned report; a violation is an error.
    pub violations: usize,
    /// Smallest `(rhs - lhs) / max(1, |rhs|)` over the audited pairs.
    pub worst_slack: f64,
    /// `E[ln alpha] < 0` at 3·SE.
    pub hypotheses_hold: bool,
}

/// Relative slack beyond which an audited pair counts as a violation.
pub const DRIFT_SLACK: f64 = 1e-9;

struct Triple {
    log_alpha: f64,
    log_beta: f64,
    lhs: f64,
    rhs: f64,
}

fn log_uniform(stream: &mut Stream, lo: f64, hi: f64) -> f64 {
    (lo.ln() + stream.uniform01() * (hi / lo).ln()).exp()
}

fn choose_m(model: &ModelSpec, env: &EnvSpec, epsilon: f64, n: usize, stream: &Stream) -> Result<(f64, bool)> {
    let draws = n.clamp(super::MIN_GROWTH_DRAWS, 10_000);
    let mut last = 1.0;
    for j in 0..=60 {
        let m = 2f64.powi(j - 10);
        let e = super::growth_rates_at(model, env, &[m], draws, stream.substream(j as u64))?[0];
        last = m;
        if e.mean + 3.0 * e.std_error <= -epsilon {
            return Ok((m, true));
        }
    }
    Ok((last, false))
}

/// Audits the drift inequality on `n` random pairs `(x, w)` (coordinates
/// log-uniform on `[1e-6, 1e6]`, plus `x = 0`) and estimates `E[ln alpha]`,
/// `E[ln+ alpha]` and `E[ln+ beta]` from the same draws.
///
/// A pair with `lhs > rhs + 1e-9 max(1, |rhs|)` is returned as
/// [`Error::DriftViolation`].
pub fn drift_bounded_check(
    model: &ModelSpec,
    env: &EnvSpec,
    construction: &DriftConstruction,
    n: usize,
    seed: u64,
) -> Result<DriftReport> {
    if n < 2 {
        return Err(Error::config("drift audit needs at least 2 samples"));
    }
    model.validate(env.dim())?;
    let sampler = env.sampler()?;
    let stream = make_stream(seed, 0);
    let mut m = None;
    match construction {
        DriftConstruction::ScalarDecreasing { m: given, epsilon } => {
            if !model.is_scalar() {
                return Err(Error::config("scalar_decreasing needs a scalar model"));
            }
            let chosen = match given {
                Some(v) if *v > 0.0 => *v,
                Some(v) => return Err(Error::config(format!("M must be positive: {v}"))),
                None => choose_m(model, env, *epsilon, n, &stream.substream(u64::MAX))?.0,
            };
            m = Some(chosen);
        }
        DriftConstruction::RickerCompetitionSum => {
            if !matches!(model, ModelSpec::RickerCompetition { .. }) {
                return Err(Error::config("ricker_competition_sum needs ricker_competition"));
            }
        }
        DriftConstruction::Constant { alpha, beta } => {
            if !(*alpha > 0.0 && *beta >= 0.0) {
                return Err(Error::config("constant drift needs alpha > 0 and beta >= 0"));
            }
        }
    }
    let k = model.dim();
    let results: Vec<Result<(Vec<f64>, Vec<f64>, Triple)>> = (0..n as u64)
        .into_par_iter()
        .map(|j| {
            let mut s = stream.substream(j);
            let x: Vec<f64> = if j == 0 {
                vec![0.0; k]
            } else {
                (0..k).map(|_| log_uniform(&mut s, 1e-6, 1e6)).collect()
            };
            let omega = sampler.sample(&mut s);
            let t = evaluate(model, construction, m, &x, &omega)?;
            Ok((x, omega, t))
        })
        .collect();
    let mut log_alpha = Vec::with_capacity(n);
    let mut log_plus_alpha = Vec::with_capacity(n);
    let mut log_plus_beta = Vec::with_capacity(n);
    let mut worst = f64::INFINITY;
    for r in results {
        let (x, omega, t) = r?;
        let scale = t.rhs.abs().max(1.0);
        if t.lhs > t.rhs + DRIFT_SLACK * scale {
            return Err(Error::DriftViolation {
                x,
                omega,
                lhs: t.lhs,
                rhs: t.rhs,
            });
        }
        worst = worst.min((t.rhs - t.lhs) / scale);
        log_alpha.push(t.log_alpha);
        log_plus_alpha.push(t.log_alpha.max(0.0));
        log_plus_beta.push(t.log_beta.max(0.0));
    }
    let e_log_alpha = RateEstimate::from_iid(&log_alpha);
    Ok(DriftReport {
        construction: construction.name(),
        m,
        samples: n,
        hypotheses_hold: e_log_alpha.sign() == Sign::Negative,
        e_log_alpha,
        e_log_plus_alpha: RateEstimate::from_iid(&log_plus_alpha),
        e_log_plus_beta: RateEstimate::from_iid(&log_plus_beta),
        violations: 0,
        worst_slack: worst,
    })
}

fn evaluate(
    model: &ModelSpec,
    construction: &DriftConstruction,
    m: Option<f64>,
    x: &[f64],
    omega: &[f64],
) -> Result<Triple> {
    let next = model.step(x, omega)?;
    let v = |y: &[f64]| y.iter().sum::<f64>();
    let (log_alpha, log_beta) = match construction {
        DriftConstruction::ScalarDecreasing { .. } => {
            let m = m.expect("M chosen before the audit");
            let mut l = [0.0];
            model.log_factors(&[m], omega, &mut l)?;
            let mut l0 = [0.0];
            model.log_factors(&[0.0], omega, &mut l0)?;
            (l[0], l0[0] + m.ln())
        }
        DriftConstruction::RickerCompetitionSum => {
            let ModelSpec::RickerCompetition { r, .. } = model else {
                unreachable!("checked by the caller")
            };
            let beta = (r[0].get(omega) - 1.0).exp() + (r[1].get(omega) - 1.0).exp();
            (-(2f64.ln()), beta.ln())
        }
        DriftConstruction::Constant { alpha, beta } => (alpha.ln(), beta.ln()),
    };
    Ok(Triple {
        log_alpha,
        log_beta,
        lhs: v(&next),
        rhs: log_alpha.exp() * v(x) + log_beta.exp(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub steps: usize,
    pub m: f64,
    /// Steps with `Z_t < X_t` beyond a `1e-12` relative rounding allowance.
    pub violations: usize,
    /// Smallest `(Z_t - X_t) / max(1, Z_t)`.
    pub min_gap: f64,
    pub final_x: f64,
    pub final_z: f64,
}

/// Runs a scalar model and its dominating affine chain
/// `Z_{t+1} = f(M, xi_{t+1}) Z_t + f(0, xi_{t+1}) M`, `Z_0 = X_0`, on common
/// environment draws and checks `Z_t >= X_t` at every step.
pub fn coupled_dominance(
    model: &ModelSpec,
    env: &EnvSpec,
    m: f64,
    x0: f64,
    steps: usize,
    seed: u64,
) -> Result<DominanceReport> {
    if !model.is_scalar() {
        return Err(Error::config("coupled dominance needs a scalar model"));
    }
    if !(m > 0.0) || !(x0 >= 0.0) {
        return Err(Error::config("need M > 0 and X_0 >= 0"));
    }
    model.validate(env.dim())?;
    let sampler: EnvSampler = env.sampler()?;
    let mut stream = make_stream(seed, 0);
    let mut omega = vec![0.0; sampler.dim()];
    let (mut x, mut z) = (x0, x0);
    let mut violations = 0;
    let mut min_gap = f64::INFINITY;
    let (mut lm, mut l0) = ([0.0], [0.0]);
    for _ in 0..steps {
        sampler.sample_into(&mut stream, &mut omega);
        model.log_factors(&[m], &omega, &mut lm)?;
        model.log_factors(&[0.0], &omega, &mut l0)?;
        x = model.step(&[x], &omega)?[0];
        z = lm[0].exp() * z + l0[0].exp() * m;
        let gap = (z - x) / z.max(1.0);
        if gap < -1e-12 {
            violations += 1;
        }
        min_gap = min_gap.min(gap);
    }
    Ok(DominanceReport {
        steps,
        m,
        violations,
        min_gap,
        final_x: x,
        final_z: z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VFunction {
    /// `V(x) = sum_i x_i`.
    #[default]
    Sum,
    /// `V(x) = |x|_2`.
    Euclidean,
}

impl VFunction {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            VFunction::Sum => x.iter().sum(),
            VFunction::Euclidean => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftErgodicReport {
    pub points: usize,
    pub inner_draws: usize,
    /// Smallest `(1 - beta) V(x) + 1_C(x) - E[V(X_1) | X_0 = x]`.
    pub worst_slack: f64,
    pub worst_x: Vec<f64>,
    pub violations: usize,
    pub holds: bool,
    pub note: &'static str,
}

/// Audits the geometric drift condition
/// `E[V(X_1) | X_0 = x] <= (1 - beta) V(x) + 1_C(x)` at `points` states with
/// coordinates log-uniform on `[lo, hi]`, estimating the conditional
/// expectation from `inner` environment draws per state (one draw when the
/// environment is deterministic). Advisory: irreducibility is not checked.
#[allow(clippy::too_many_arguments)]
pub fn drift_ergodic_check<S: StochasticMap + Sync>(
    map: &S,
    env: &EnvSpec,
    v: VFunction,
    c: &SetDescriptor,
    beta: f64,
    points: usize,
    inner: usize,
    range: (f64, f64),
    seed: u64,
) -> Result<DriftErgodicReport> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::config(format!("beta must be in (0,1): {beta}")));
    }
    let (lo, hi) = range;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::config("sampling range needs 0 < lo < hi"));
    }
    if points == 0 || inner == 0 {
        return Err(Error::config("points and inner draws must be positive"));
    }
    let sampler = env.sampler()?;
    let inner = if env.is_deterministic() { 1 } else { inner };
    let stream = make_stream(seed, 0);
    let ext = map.extinction_set();
    let k = map.state_dim();
    let results: Vec<Result<(Vec<f64>, f64)>> = (0..points as u64)
        .into_par_iter()
        .map(|j| {
            let mut s = stream.substream(j);
            let x: Vec<f64> = (0..k).map(|_| log_uniform(&mut s, lo, hi)).collect();
            let mut total = 0.0;
            for _ in 0..inner {
                let omega = sampler.sample(&mut s);
                total += v.eval(&map.step(&x, &omega)?);
            }
            let lhs = total / inner as f64;
            let indicator = if c.contains(&x, ext) { 1.0 } else { 0.0 };
            Ok((x.clone(), (1.0 - beta) * v.eval(&x) + indicator - lhs))
        })
        .collect();
    let mut worst = (f64::INFINITY, Vec::new());
    let mut violations = 0;
    for r in results {
        let (x, slack) = r?;
        if slack < 0.0 {
            violations += 1;
        }
        if slack < worst.0 {
            worst = (slack, x);
        }
    }
    Ok(DriftErgodicReport {
        points,
        inner_draws: inner,
        worst_slack: worst.0,
        worst_x: worst.1,
        violations,
        holds: violations == 0,
        note: "advisory: phi-irreducibility is not checked",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ScalarDist;
    use crate::models::Wire;

    struct Contraction;

    impl StochasticMap for Contraction {
        fn state_dim(&self) -> usize {
            1
        }

        fn step(&self, x: &[f64], omega: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![0.5 * x[0] + omega[0]])
        }
    }

    fn hassell() -> (ModelSpec, EnvSpec) {
        (
            ModelSpec::Hassell {
                lambda: Wire::Coord(0),
                b: Wire::Const(1.0),
            },
            EnvSpec::new(vec![ScalarDist::LogNormal {
                log_mean: 0.3,
                log_sd: 0.3,
            }]),
        )
    }

    #[test]
    fn hassell_construction_holds() {
        let (m, env) = hassell();
        let c = DriftConstruction::ScalarDecreasing {
            m: None,
            epsilon: 0.05,
        };
        let r = drift_bounded_check(&m, &env, &c, 5000, 1).unwrap();
        assert!(r.hypotheses_hold);
        assert!(r.worst_slack >= 0.0);
        // E ln f(M) = 0.3 - ln(1+M) <= -0.05 first holds at M = 0.5
        assert_eq!(r.m, Some(0.5));
    }

    #[test]
    fn ricker_competition_sum_holds() {
        let m = ModelSpec::RickerCompetition {
            r: [Wire::Coord(0), Wire::Coord(1)],
            alpha: [0.6, 0.5],
        };
        let env = EnvSpec::new(vec![
            ScalarDist::Normal { mean: 1.0, sd: 0.3 },
            ScalarDist::Normal { mean: 0.8, sd: 0.3 },
        ]);
        let r = drift_bounded_check(&m, &env, &DriftConstruction::RickerCompetitionSum, 5000, 2)
            .unwrap();
        assert!(r.hypotheses_hold);
    }

    #[test]
    fn unit_alpha_fails_hypotheses() {
        let m = ModelSpec::Hassell {
            lambda: Wire::Const(2.0),
            b: Wire::Const(1.0),
        };
        let c = DriftConstruction::Constant {
            alpha: 1.0,
            beta: 2.0,
        };
        let r = drift_bounded_check(&m, &EnvSpec::default(), &c, 1000, 3).unwrap();
        assert!(!r.hypotheses_hold);
        assert_eq!(r.e_log_alpha.mean, 0.0);
    }

    #[test]
    fn violation_returns_counterexample() {
        let m = ModelSpec::Hassell {
            lambda: Wire::Const(2.0),
            b: Wire::Const(0.0),
        };
        let c = DriftConstruction::Constant {
            alpha: 1.5,
            beta: 0.0,
        };
        match drift_bounded_check(&m, &EnvSpec::default(), &c, 100, 3) {
            Err(Error::DriftViolation { lhs, rhs, .. }) => assert!(lhs > rhs),
            other => panic!("expected a violation, got {other:?}"),
        }
    }

    #[test]
    fn coupled_chain_dominates() {
        let (m, env) = hassell();
        let r = coupled_dominance(&m, &env, 0.5, 0.3, 10_000, 9).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.min_gap >= 0.0);
    }

    fn toy_env() -> EnvSpec {
        EnvSpec::new(vec![ScalarDist::Uniform { lo: 0.0, hi: 1.0 }])
    }

    #[test]
    fn contraction_geometric_drift() {
        let c = SetDescriptor::Box {
            intervals: vec![[0.0, 10.0]],
        };
        let r = drift_ergodic_check(&Contraction, &toy_env(), VFunction::Sum, &c, 0.4, 500, 1000, (1e-3, 1e3), 4)
            .unwrap();
        assert!(r.holds, "{r:?}");
        let r = drift_ergodic_check(&Contraction, &toy_env(), VFunction::Sum, &c, 0.99, 500, 1000, (1e-3, 1e3), 4)
            .unwrap();
        assert!(!r.holds);
        assert!(r.worst_x[0] > 1.0);
    }

    #[test]
    fn deterministic_drift_uses_single_draw() {
        let m = ModelSpec::BevertonHolt {
            lambda: Wire::Const(2.0),
            a: Wire::Const(1.0),
            s: 0.0,
        };
        let c = SetDescriptor::Box {
            intervals: vec![[0.0, 10.0]],
        };
        let r = drift_ergodic_check(&m, &EnvSpec::default(), VFunction::Sum, &c, 0.5, 200, 1000, (1e-3, 1e3), 5)
            .unwrap();
        assert_eq!(r.inner_draws, 1);
        // 2x/(1+x) <= x/2 + 1_C(x) everywhere
        assert!(r.holds);
    }
}
