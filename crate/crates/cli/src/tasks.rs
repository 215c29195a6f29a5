use popdyn_core::engine::{ensemble_hit_probability, simulate};
use popdyn_core::lyap::lyapunov_mc;
use popdyn_core::persist::{
    boundary_invasion_report, coupled_dominance, drift_bounded_check, drift_ergodic_check,
    find_persistence_weights, invasion_rate, rps_condition, scalar_classify, verdict_word,
    DriftConstruction, Evidence, RowSource, VerdictKind,
};
use popdyn_core::{
    roerdink_gamma, EnvSpec, Error, ModelSpec, Observables, RateEstimate, ScalarDist, SimConfig,
    Wire,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    classify_params, params, DriftParams, ExperimentConfig, GammaParams, InvadeParams,
    LyapunovParams, PermanenceParams, RpsParams, SimulateParams, Task,
};

/// One line of results.csv.
#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub task: &'static str,
    pub quantity: String,
    pub species: Option<usize>,
    pub face: Option<String>,
    pub mean: Option<f64>,
    pub std_error: Option<f64>,
    pub n: Option<usize>,
    pub verdict: Option<String>,
}

pub struct Outcome {
    pub report: Value,
    pub rows: Vec<Row>,
}

struct Rows {
    task: &'static str,
    rows: Vec<Row>,
}

impl Rows {
    fn estimate(&mut self, quantity: impl Into<String>, e: &RateEstimate) -> &mut Row {
        self.push(quantity, Some(e.mean), Some(e.std_error), Some(e.n))
    }

    fn value(&mut self, quantity: impl Into<String>, v: f64) -> &mut Row {
        self.push(quantity, Some(v), None, None)
    }

    fn push(
        &mut self,
        quantity: impl Into<String>,
        mean: Option<f64>,
        std_error: Option<f64>,
        n: Option<usize>,
    ) -> &mut Row {
        self.rows.push(Row {
            task: self.task,
            quantity: quantity.into(),
            species: None,
            face: None,
            mean,
            std_error,
            n,
            verdict: None,
        });
        self.rows.last_mut().unwrap()
    }
}

impl Row {
    fn species(&mut self, i: usize) -> &mut Self {
        self.species = Some(i);
        self
    }

    fn face(&mut self, support: &[usize]) -> &mut Self {
        let parts: Vec<String> = support.iter().map(|i| i.to_string()).collect();
        self.face = Some(format!("{{{}}}", parts.join(" ")));
        self
    }

    fn verdict(&mut self, v: impl Into<String>) -> &mut Self {
        self.verdict = Some(v.into());
        self
    }
}

fn to_value<T: Serialize>(t: &T) -> Value {
    serde_json::to_value(t).expect("reports serialize")
}

fn kind_word(k: VerdictKind) -> &'static str {
    match k {
        VerdictKind::Extinction => "extinction",
        VerdictKind::Explosion => "explosion",
        VerdictKind::Persistent => "persistent",
        VerdictKind::Inconclusive => "inconclusive",
    }
}

fn resolve(cfg: &ExperimentConfig) -> Result<(ModelSpec, EnvSpec), Error> {
    let model = cfg
        .model
        .as_ref()
        .ok_or_else(|| Error::Config(format!("task {} needs a model", cfg.task.name())))?;
    model.resolve(cfg.env.as_ref())
}

pub fn run(cfg: &ExperimentConfig, explore: bool) -> Result<Outcome, Error> {
    cfg.sim.validate()?;
    let mut rows = Rows {
        task: cfg.task.name(),
        rows: Vec::new(),
    };
    let report = match cfg.task {
        Task::Simulate => run_simulate(cfg, &mut rows)?,
        Task::Classify => {
            let opts = classify_params(&cfg.task_params)?;
            let (model, env) = resolve(cfg)?;
            let v = scalar_classify(&model, &env, &cfg.sim, &opts)?;
            let word = kind_word(v.kind);
            for (key, e) in &v.evidence {
                let row = match e {
                    Evidence::Estimate(e) => rows.estimate(key.clone(), e),
                    Evidence::Number(x) => rows.value(key.clone(), *x),
                    Evidence::Symbolic(s) => match s.parse::<f64>() {
                        Ok(x) => rows.value(key.clone(), x),
                        Err(_) => rows.push(key.clone(), None, None, None),
                    },
                };
                row.verdict(word);
            }
            json!({ "verdict": word, "details": to_value(&v) })
        }
        Task::Invade => {
            let p: InvadeParams = params(&cfg.task_params)?;
            let (model, env) = resolve(cfg)?;
            let e = invasion_rate(&model, &env, &cfg.sim, p.invader, &p.resident_support)?;
            rows.estimate("invasion_rate", &e)
                .species(p.invader)
                .face(&p.resident_support)
                .verdict(verdict_word(&e));
            json!({
                "invader": p.invader,
                "resident_support": p.resident_support,
                "invasion_rate": to_value(&e),
                "verdict": verdict_word(&e),
            })
        }
        Task::Permanence => {
            let p: PermanenceParams = params(&cfg.task_params)?;
            let (model, env) = resolve(cfg)?;
            let table = boundary_invasion_report(&model, &env, &cfg.sim, p.dirac_draws)?;
            let weights = find_persistence_weights(&table);
            let verdict = to_value(&table.verdict);
            let verdict_str = verdict.as_str().unwrap_or_default().to_string();
            for row in &table.rows {
                let status = to_value(&row.status);
                let status = status.as_str().unwrap_or_default();
                if let RowSource::Degenerate { .. } = row.source {
                    rows.push("invasion_rate", None, None, None)
                        .face(&row.support)
                        .verdict(status);
                }
                for (i, e) in row.rates.iter().enumerate() {
                    rows.estimate("invasion_rate", e)
                        .species(i)
                        .face(&row.support)
                        .verdict(status);
                }
            }
            for (i, w) in weights.weights.iter().enumerate() {
                rows.value("weight", *w).species(i);
            }
            rows.value("weight_margin", weights.margin)
                .verdict(if weights.feasible { "feasible" } else { "infeasible" });
            rows.push("permanence", None, None, None).verdict(verdict_str.clone());
            json!({
                "verdict": verdict_str,
                "table": to_value(&table),
                "weights": to_value(&weights),
            })
        }
        Task::Drift => run_drift(cfg, &mut rows)?,
        Task::Rps => {
            let p: RpsParams = params(&cfg.task_params)?;
            let (model, env) = resolve(cfg)?;
            let r = rps_condition(&model, &env, p.n, cfg.sim.seed)?;
            rows.estimate("exact_lhs", &r.exact_lhs).verdict(r.exact_verdict);
            rows.estimate("small_d_lhs", &r.small_d_lhs).verdict(r.small_d_verdict);
            to_value(&r)
        }
        Task::Gamma => run_gamma(cfg, &mut rows)?,
        Task::Lyapunov => {
            let p: LyapunovParams = params(&cfg.task_params)?;
            let (model, env) = resolve(cfg)?;
            let g = lyapunov_mc(&model, &env, &cfg.sim, p.norm)?;
            rows.estimate("gamma_mc", &g).verdict(verdict_word(&g));
            json!({ "norm": to_value(&p.norm), "gamma_mc": to_value(&g), "sign": verdict_word(&g) })
        }
    };
    let mut report = report;
    if explore {
        report["explore"] = explore_stats(cfg)?;
    }
    Ok(Outcome {
        report,
        rows: rows.rows,
    })
}

fn run_simulate(cfg: &ExperimentConfig, rows: &mut Rows) -> Result<Value, Error> {
    let p: SimulateParams = params(&cfg.task_params)?;
    let (model, env) = resolve(cfg)?;
    let mut obs = p.observables.clone();
    let empty = obs.sets.is_empty() && obs.functionals.is_empty();
    if p.standard.unwrap_or(empty) {
        let std = Observables::standard(&model, &cfg.sim);
        obs.sets.extend(std.sets);
        obs.functionals.extend(std.functionals);
    }
    let mut report = simulate(&model, &env, &cfg.sim, &obs)?;
    if !p.include_samples {
        for r in &mut report.replicates {
            r.thinned_samples.clear();
        }
    }
    let pooled = &report.pooled;
    let steps = cfg.sim.samples() * pooled.replicates;
    for o in &pooled.occupation {
        rows.push(format!("occupation[{}]", o.set), Some(o.fraction), None, Some(steps));
    }
    for a in &pooled.functional_averages {
        rows.estimate(a.functional.clone(), &a.estimate);
    }
    rows.push(
        "extinct_replicates",
        Some(pooled.extinct_replicates as f64),
        None,
        Some(pooled.replicates),
    );
    let mut hits = Vec::new();
    if !p.hit_sets.is_empty() {
        let t = p.hit_time.unwrap_or(cfg.sim.horizon);
        for set in &p.hit_sets {
            let h = ensemble_hit_probability(&model, &env, &cfg.sim, set, t)?;
            rows.push(
                format!("hit_probability[{}]@{t}", set.name()),
                Some(h.probability),
                Some(h.std_error),
                Some(h.replicates),
            );
            hits.push(json!({ "set": set.name(), "t": t, "estimate": to_value(&h) }));
        }
    }
    Ok(json!({ "simulation": to_value(&report), "hit_probabilities": hits }))
}

fn run_drift(cfg: &ExperimentConfig, rows: &mut Rows) -> Result<Value, Error> {
    let p: DriftParams = params(&cfg.task_params)?;
    let (model, env) = resolve(cfg)?;
    match p {
        DriftParams::Bounded {
            construction,
            n,
            dominance_steps,
            dominance_x0,
        } => {
            let r = drift_bounded_check(&model, &env, &construction, n, cfg.sim.seed)?;
            let word = if r.hypotheses_hold { "hold" } else { "fail" };
            rows.estimate("e_log_alpha", &r.e_log_alpha).verdict(word);
            rows.estimate("e_log_plus_alpha", &r.e_log_plus_alpha);
            rows.estimate("e_log_plus_beta", &r.e_log_plus_beta);
            rows.push("violations", Some(r.violations as f64), None, Some(r.samples));
            let dominance = match (dominance_steps, &construction, r.m) {
                (0, _, _) => None,
                (steps, DriftConstruction::ScalarDecreasing { .. }, Some(m)) => {
                    let d = coupled_dominance(&model, &env, m, dominance_x0, steps, cfg.sim.seed)?;
                    rows.push("dominance_violations", Some(d.violations as f64), None, Some(d.steps))
                        .verdict(if d.violations == 0 { "dominates" } else { "violated" });
                    Some(to_value(&d))
                }
                _ => {
                    return Err(Error::Config(
                        "dominance_steps needs the scalar_decreasing construction".into(),
                    ))
                }
            };
            Ok(json!({ "bounded": to_value(&r), "dominance": dominance }))
        }
        DriftParams::Ergodic {
            v,
            set,
            beta,
            points,
            inner,
            range,
        } => {
            let r = drift_ergodic_check(&model, &env, v, &set, beta, points, inner, range, cfg.sim.seed)?;
            rows.push("worst_slack", Some(r.worst_slack), None, Some(r.points))
                .verdict(if r.holds { "holds" } else { "fails" });
            rows.push("violations", Some(r.violations as f64), None, Some(r.points));
            Ok(json!({ "ergodic": to_value(&r) }))
        }
    }
}

fn run_gamma(cfg: &ExperimentConfig, rows: &mut Rows) -> Result<Value, Error> {
    let p: GammaParams = params(&cfg.task_params)?;
    let g = roerdink_gamma(&p.input)?;
    rows.value("gamma_closed_form", g.value);
    rows.value("error_bound", g.error_bound);
    if let Some(v) = g.unscaled_z {
        rows.value("gamma_unscaled_z", v);
    }
    if let Some(e) = g.p1 {
        rows.value("gamma_at_cap", e.at_cap);
        rows.value("candidate_psi_k", e.candidate_psi_k);
        rows.value("candidate_psi_a", e.candidate_psi_a);
    }
    let mut out = json!({
        "input": to_value(&p.input),
        "gamma_closed_form": g.value,
        "closed_form": to_value(&g),
    });
    if p.monte_carlo {
        let model = ModelSpec::Biennial {
            p: p.input.p,
            a: p.input.a,
            b1: 1.0,
            b2: 1.0,
            xi: Wire::Coord(0),
        };
        let env = EnvSpec::new(vec![ScalarDist::Gamma {
            shape: p.input.k,
            scale: p.input.theta,
        }]);
        let mc = lyapunov_mc(&model, &env, &cfg.sim, Default::default())?;
        let diff = (g.value - mc.mean).abs();
        let agree = diff <= 3.0 * mc.std_error + g.error_bound;
        rows.estimate("gamma_mc", &mc);
        rows.value("abs_difference", diff)
            .verdict(if agree { "agree" } else { "disagree" });
        out["gamma_mc"] = to_value(&mc);
        out["abs_difference"] = json!(diff);
        out["agree_3se"] = json!(agree);
    }
    Ok(out)
}

/// Raw long-run statistics with no verdict attached.
fn explore_stats(cfg: &ExperimentConfig) -> Result<Value, Error> {
    let Ok((model, env)) = resolve(cfg) else {
        return Ok(Value::Null);
    };
    let obs = Observables::standard(&model, &cfg.sim);
    let sim: &SimConfig = &cfg.sim;
    let report = simulate(&model, &env, sim, &obs)?;
    Ok(json!({
        "note": "raw statistics only; no verdict is drawn",
        "pooled": to_value(&report.pooled),
        "terminal_states": report.replicates.iter().map(|r| r.terminal_state.clone()).collect::<Vec<_>>(),
    }))
}
