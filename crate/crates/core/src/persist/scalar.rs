use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{growth_rates_at, margin, Evidence, Verdict, VerdictKind};
use crate::engine::{simulate, Observables, SetDescriptor, SimConfig};
use crate::env::{make_stream, EnvSpec, ScalarDist};
use crate::error::{Error, Result};
use crate::models::{ModelSpec, Wire};
use crate::stats::{RateEstimate, Sign};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyOptions {
    /// Independent draws behind each growth-rate estimate.
    pub growth_draws: usize,
    /// Where `lambda(inf)` is sampled when no analytic limit is available.
    pub x_max: f64,
    /// Attach long-run simulation evidence.
    pub simulate: bool,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            growth_draws: 100_000,
            x_max: 1e6,
            simulate: true,
        }
    }
}

enum Limit {
    NegInf,
    Estimate(RateEstimate, &'static str),
}

fn wire_dist(w: Wire, env: &EnvSpec) -> ScalarDist {
    match w {
        Wire::Const(v) => ScalarDist::constant(v),
        Wire::Coord(i) => env.coords[i].clone(),
    }
}

fn surely_positive(d: &ScalarDist) -> bool {
    match d {
        ScalarDist::Constant { value } => *value > 0.0,
        ScalarDist::LogNormal { .. } | ScalarDist::Gamma { .. } => true,
        ScalarDist::Uniform { lo, .. } => *lo > 0.0,
        ScalarDist::Discrete { values, probs } => values
            .iter()
            .zip(probs)
            .all(|(v, p)| *p == 0.0 || *v > 0.0),
        ScalarDist::Normal { .. } => false,
    }
}

fn is_zero(d: &ScalarDist) -> bool {
    matches!(d, ScalarDist::Constant { value } if *value == 0.0)
}

/// `lim_{x -> inf} E[ln f(x, xi)]` where the formula gives it directly;
/// `None` means it has to be sampled at `x_max`.
fn analytic_limit(model: &ModelSpec, env: &EnvSpec, lambda0: &RateEstimate) -> Option<Limit> {
    match model {
        // E ln f = E ln lambda - E[b] ln(1+x)
        ModelSpec::Hassell { b, .. } => {
            let b = wire_dist(*b, env);
            if b.mean() > 0.0 {
                Some(Limit::NegInf)
            } else if is_zero(&b) {
                Some(Limit::Estimate(*lambda0, "density_independent"))
            } else {
                None
            }
        }
        // E ln f = E r - E[a] x
        ModelSpec::RickerScalar { a, .. } => {
            let a = wire_dist(*a, env);
            if a.mean() > 0.0 {
                Some(Limit::NegInf)
            } else if is_zero(&a) {
                Some(Limit::Estimate(*lambda0, "density_independent"))
            } else {
                None
            }
        }
        // f -> s when a > 0 almost surely
        ModelSpec::BevertonHolt { a, s, .. } => {
            let a = wire_dist(*a, env);
            if surely_positive(&a) {
                if *s > 0.0 {
                    Some(Limit::Estimate(RateEstimate::exact(s.ln()), "analytic_ln_s"))
                } else {
                    Some(Limit::NegInf)
                }
            } else if is_zero(&a) {
                Some(Limit::Estimate(*lambda0, "density_independent"))
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Classifies a scalar model by the trichotomy: extinction when
/// `lambda(0) = E[ln f(0, xi)] < 0`, explosion when
/// `lambda(inf) = lim E[ln f(x, xi)] > 0`, persistence (with boundedness)
/// when `lambda(0) > 0 > lambda(inf)`, each decided at 3·SE.
///
/// With `opts.simulate` the report also carries long-run simulation
/// evidence: replicates that hit the extinction floor, occupation of
/// `S_eta`, and numeric overflow (which counts as explosion evidence).
pub fn scalar_classify(
    model: &ModelSpec,
    env: &EnvSpec,
    cfg: &SimConfig,
    opts: &ClassifyOptions,
) -> Result<Verdict> {
    if !model.is_scalar() {
        return Err(Error::config(format!(
            "scalar_classify needs a scalar model, got {} with {} species",
            model.name(),
            model.dim()
        )));
    }
    if opts.growth_draws < super::MIN_GROWTH_DRAWS {
        return Err(Error::config(format!(
            "growth_draws must be at least {}",
            super::MIN_GROWTH_DRAWS
        )));
    }
    if !(opts.x_max > 0.0 && opts.x_max.is_finite()) {
        return Err(Error::config("x_max must be positive and finite"));
    }
    cfg.validate()?;
    let stream = make_stream(cfg.seed, 0);
    let lambda0 = growth_rates_at(model, env, &[0.0], opts.growth_draws, stream.substream(0))?[0];
    let limit = match analytic_limit(model, env, &lambda0) {
        Some(l) => l,
        None => Limit::Estimate(
            growth_rates_at(model, env, &[opts.x_max], opts.growth_draws, stream.substream(1))?[0],
            "monte_carlo_at_x_max",
        ),
    };

    let mut evidence = BTreeMap::new();
    evidence.insert("lambda_0".to_string(), Evidence::Estimate(lambda0));
    let limit_sign = match &limit {
        Limit::NegInf => {
            evidence.insert("lambda_inf".into(), Evidence::Symbolic("-inf".into()));
            evidence.insert("lambda_inf_method".into(), Evidence::Symbolic("analytic".into()));
            Sign::Negative
        }
        Limit::Estimate(e, method) => {
            evidence.insert("lambda_inf".into(), Evidence::Estimate(*e));
            evidence.insert("lambda_inf_method".into(), Evidence::Symbolic((*method).into()));
            if *method == "monte_carlo_at_x_max" {
                evidence.insert("lambda_inf_x_max".into(), Evidence::Number(opts.x_max));
            }
            e.sign()
        }
    };
    let limit_est = match &limit {
        Limit::Estimate(e, _) => Some(*e),
        Limit::NegInf => None,
    };

    let (kind, decisive): (VerdictKind, Vec<RateEstimate>) = match (lambda0.sign(), limit_sign) {
        (Sign::Negative, _) => (VerdictKind::Extinction, vec![lambda0]),
        (_, Sign::Positive) => (VerdictKind::Explosion, limit_est.into_iter().collect()),
        (Sign::Positive, Sign::Negative) => (
            VerdictKind::Persistent,
            std::iter::once(lambda0).chain(limit_est).collect(),
        ),
        _ => (
            VerdictKind::Inconclusive,
            std::iter::once(lambda0).chain(limit_est).collect(),
        ),
    };
    let decision_margin = decisive.iter().filter_map(margin).reduce(f64::min);

    if opts.simulate {
        attach_simulation(model, env, cfg, &mut evidence)?;
    }
    Ok(Verdict {
        kind,
        evidence,
        decision_margin,
    })
}

fn attach_simulation(
    model: &ModelSpec,
    env: &EnvSpec,
    cfg: &SimConfig,
    evidence: &mut BTreeMap<String, Evidence>,
) -> Result<()> {
    let sets: Vec<SetDescriptor> = cfg
        .eta_grid
        .iter()
        .map(|&eta| SetDescriptor::ExtinctionNeighborhood { eta })
        .chain(std::iter::once(SetDescriptor::OutsideBall {
            radius: cfg.bound_radius,
        }))
        .collect();
    let obs = Observables {
        sets: sets.clone(),
        functionals: Vec::new(),
    };
    match simulate(model, env, cfg, &obs) {
        Ok(rep) => {
            evidence.insert(
                "sim_replicates".into(),
                Evidence::Number(rep.pooled.replicates as f64),
            );
            evidence.insert(
                "sim_extinct_replicates".into(),
                Evidence::Number(rep.pooled.extinct_replicates as f64),
            );
            for set in &sets {
                let frac = rep.pooled.occupation_of(set).unwrap_or(f64::NAN);
                evidence.insert(format!("sim_occupation[{}]", set.name()), Evidence::Number(frac));
            }
        }
        Err(Error::NumericOverflow { step, .. }) => {
            evidence.insert(
                "sim_overflow".into(),
                Evidence::Symbolic(match step {
                    Some(s) => format!("state overflowed at step {s}"),
                    None => "state overflowed".into(),
                }),
            );
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::InitialState;

    fn quick_cfg() -> SimConfig {
        SimConfig {
            seed: 3,
            replicates: 4,
            burn_in: 100,
            horizon: 2000,
            thinning: 100,
            initial_state: InitialState::Vector(vec![0.5]),
            ..SimConfig::default()
        }
    }

    fn opts() -> ClassifyOptions {
        ClassifyOptions {
            growth_draws: 20_000,
            ..ClassifyOptions::default()
        }
    }

    fn hassell(log_mean: f64) -> (ModelSpec, EnvSpec) {
        (
            ModelSpec::Hassell {
                lambda: Wire::Coord(0),
                b: Wire::Const(1.0),
            },
            EnvSpec::new(vec![ScalarDist::LogNormal {
                log_mean,
                log_sd: 0.3,
            }]),
        )
    }

    #[test]
    fn constant_growth_explodes() {
        let m = ModelSpec::Hassell {
            lambda: Wire::Const(2.0),
            b: Wire::Const(0.0),
        };
        let v = scalar_classify(&m, &EnvSpec::default(), &quick_cfg(), &opts()).unwrap();
        assert_eq!(v.kind, VerdictKind::Explosion);
        assert!(v.evidence.contains_key("sim_overflow"));
        assert_eq!(v.decision_margin, None);
    }

    #[test]
    fn hassell_regimes() {
        let (m, env) = hassell(0.3);
        let v = scalar_classify(&m, &env, &quick_cfg(), &opts()).unwrap();
        assert_eq!(v.kind, VerdictKind::Persistent);
        assert_eq!(v.evidence["lambda_inf"], Evidence::Symbolic("-inf".into()));
        let (m, env) = hassell(-0.2);
        let v = scalar_classify(&m, &env, &quick_cfg(), &opts()).unwrap();
        assert_eq!(v.kind, VerdictKind::Extinction);
        assert!(v.decision_margin.unwrap() > 3.0);
    }

    #[test]
    fn zero_mean_growth_is_inconclusive() {
        let (m, env) = hassell(0.0);
        let v = scalar_classify(
            &m,
            &env,
            &quick_cfg(),
            &ClassifyOptions {
                simulate: false,
                ..opts()
            },
        )
        .unwrap();
        // a centred estimate can land anywhere inside the 3·SE band
        if v.kind != VerdictKind::Inconclusive {
            assert!(v.decision_margin.unwrap() > 3.0);
        }
    }

    #[test]
    fn beverton_holt_limit_is_ln_s() {
        let m = ModelSpec::BevertonHolt {
            lambda: Wire::Const(2.0),
            a: Wire::Const(1.0),
            s: 0.5,
        };
        let v = scalar_classify(&m, &EnvSpec::default(), &quick_cfg(), &opts()).unwrap();
        assert_eq!(v.kind, VerdictKind::Persistent);
        assert_eq!(
            v.evidence["lambda_inf"],
            Evidence::Estimate(RateEstimate::exact(0.5f64.ln()))
        );
    }

    #[test]
    fn sampled_limit_when_no_formula() {
        // a may be negative, so the limit is sampled at x_max
        let m = ModelSpec::RickerScalar {
            r: Wire::Const(1.0),
            a: Wire::Coord(0),
        };
        let env = EnvSpec::new(vec![ScalarDist::Normal { mean: -1e-3, sd: 0.01 }]);
        let v = scalar_classify(
            &m,
            &env,
            &quick_cfg(),
            &ClassifyOptions {
                simulate: false,
                ..opts()
            },
        )
        .unwrap();
        assert_eq!(
            v.evidence["lambda_inf_method"],
            Evidence::Symbolic("monte_carlo_at_x_max".into())
        );
        assert_eq!(v.kind, VerdictKind::Explosion);
    }

    #[test]
    fn non_scalar_rejected() {
        let m = ModelSpec::RickerCompetition {
            r: [Wire::Const(1.0), Wire::Const(1.0)],
            alpha: [0.5, 0.5],
        };
        assert!(matches!(
            scalar_classify(&m, &EnvSpec::default(), &quick_cfg(), &opts()),
            Err(Error::Config(_))
        ));
    }
}
