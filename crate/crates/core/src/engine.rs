//! Trajectory simulation and the occupation statistics behind every
//! boundedness and persistence notion.
//!
//! For a trajectory `X_0, X_1, ...` the empirical measure
//! `Pi_t = (1/t) sum_{s<t} delta_{X_s}` is summarized by occupation fractions
//! of named sets, thinned state samples and batch-means time averages of
//! functionals, all taken over the post-burn-in window `B..T-1`.
//!
//! Multiplicative models are advanced in log coordinates and structured
//! models as `exp(s) * v` with `|v|_1 = 1`, so decaying populations never
//! denormalize. A coordinate (or the scale `s`) that falls below
//! [`EXTINCTION_FLOOR_LOG`] is marked numerically extinct and held there.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{make_stream, EnvSampler, EnvSpec, ScalarDist, Stream};
use crate::error::{Error, Result};
use crate::models::{ExtinctionSet, ModelSpec, StateSpace};
use crate::stats::{BatchAccumulator, RateEstimate, DEFAULT_BATCHES};

/// `ln` of the numerical extinction floor.
pub const EXTINCTION_FLOOR_LOG: f64 = -700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitKeyword {
    #[serde(rename = "random_interior")]
    RandomInterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Vector(Vec<f64>),
    Keyword(InitKeyword),
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Keyword(InitKeyword::RandomInterior)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub replicates: usize,
    pub burn_in: usize,
    pub horizon: usize,
    pub thinning: usize,
    pub initial_state: InitialState,
    pub eta_grid: Vec<f64>,
    pub bound_radius: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            replicates: 1,
            burn_in: 1_000,
            horizon: 10_000,
            thinning: 100,
            initial_state: InitialState::default(),
            eta_grid: vec![0.01],
            bound_radius: 100.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::config("replicates must be positive"));
        }
        if self.horizon == 0 || self.burn_in >= self.horizon {
            return Err(Error::config(format!(
                "need 0 <= burn_in < horizon, got burn_in {} and horizon {}",
                self.burn_in, self.horizon
            )));
        }
        if self.thinning == 0 {
            return Err(Error::config("thinning must be positive"));
        }
        if self.eta_grid.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::config("eta_grid entries must be positive"));
        }
        if !(self.bound_radius > 0.0) {
            return Err(Error::config("bound_radius must be positive"));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.horizon - self.burn_in
    }
}

/// A measurable set of states whose occupation is tracked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "set", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetDescriptor {
    /// `S_eta = {x : d(x, S_0) <= eta}`.
    ExtinctionNeighborhood { eta: f64 },
    /// Complement of the closed Euclidean ball of radius `radius`.
    OutsideBall { radius: f64 },
    /// Product of closed intervals, one per coordinate.
    Box { intervals: Vec<[f64; 2]> },
    Complement { of: std::boxed::Box<SetDescriptor> },
}

impl SetDescriptor {
    pub fn contains(&self, x: &[f64], ext: ExtinctionSet) -> bool {
        match self {
            SetDescriptor::ExtinctionNeighborhood { eta } => ext.distance(x) <= *eta,
            SetDescriptor::OutsideBall { radius } => {
                x.iter().map(|v| v * v).sum::<f64>().sqrt() > *radius
            }
            SetDescriptor::Box { intervals } => intervals
                .iter()
                .zip(x)
                .all(|([lo, hi], v)| *lo <= *v && *v <= *hi),
            SetDescriptor::Complement { of } => !of.contains(x, ext),
        }
    }

    pub fn complement(self) -> SetDescriptor {
        SetDescriptor::Complement {
            of: std::boxed::Box::new(self),
        }
    }

    pub fn name(&self) -> String {
        match self {
            SetDescriptor::ExtinctionNeighborhood { eta } => format!("S_eta({eta})"),
            SetDescriptor::OutsideBall { radius } => format!("outside_ball({radius})"),
            SetDescriptor::Box { intervals } => {
                let parts: Vec<String> =
                    intervals.iter().map(|[a, b]| format!("[{a},{b}]")).collect();
                format!("box{}", parts.join("x"))
            }
            SetDescriptor::Complement { of } => format!("not {}", of.name()),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            SetDescriptor::ExtinctionNeighborhood { eta } if !(*eta > 0.0) => {
                Err(Error::config("eta must be positive"))
            }
            SetDescriptor::OutsideBall { radius } if !(*radius > 0.0) => {
                Err(Error::config("ball radius must be positive"))
            }
            SetDescriptor::Box { intervals } if intervals.len() != dim => Err(Error::config(
                format!("box has {} intervals for a {dim}-dimensional state", intervals.len()),
            )),
            SetDescriptor::Complement { of } => of.validate(dim),
            _ => Ok(()),
        }
    }
}

/// A real-valued observable averaged along trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "functional", rename_all = "snake_case", deny_unknown_fields)]
pub enum Functional {
    Coordinate { index: usize },
    /// `ln f_i(X_s, xi_{s+1})`; for structured models species 0 is the
    /// total-norm log growth.
    LogPerCapita { species: usize },
    Indicator { set: SetDescriptor },
    /// `ln |X_s|_1`.
    LogNorm,
}

impl Functional {
    pub fn name(&self) -> String {
        match self {
            Functional::Coordinate { index } => format!("x[{index}]"),
            Functional::LogPerCapita { species } => format!("log_f[{species}]"),
            Functional::Indicator { set } => format!("1[{}]", set.name()),
            Functional::LogNorm => "log_norm".to_string(),
        }
    }

    fn validate(&self, model: &ModelSpec) -> Result<()> {
        let dim = model.dim();
        match self {
            Functional::Coordinate { index } if *index >= dim => {
                Err(Error::config(format!("coordinate {index} out of range")))
            }
            Functional::LogPerCapita { species } => {
                let max = if model.is_structured() { 1 } else { dim };
                if *species >= max {
                    Err(Error::config(format!("species {species} out of range")))
                } else {
                    Ok(())
                }
            }
            Functional::Indicator { set } => set.validate(dim),
            _ => Ok(()),
        }
    }
}

/// Sets and functionals to record during a simulation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Observables {
    pub sets: Vec<SetDescriptor>,
    pub functionals: Vec<Functional>,
}

impl Observables {
    /// `S_eta` for each eta in the grid, the outside of the bound ball, and
    /// every coordinate plus every per-capita log growth rate.
    pub fn standard(model: &ModelSpec, cfg: &SimConfig) -> Self {
        let mut sets: Vec<SetDescriptor> = cfg
            .eta_grid
            .iter()
            .map(|&eta| SetDescriptor::ExtinctionNeighborhood { eta })
            .collect();
        sets.push(SetDescriptor::OutsideBall {
            radius: cfg.bound_radius,
        });
        let mut functionals: Vec<Functional> = (0..model.dim())
            .map(|index| Functional::Coordinate { index })
            .collect();
        let growth = if model.is_structured() { 1 } else { model.dim() };
        functionals.extend((0..growth).map(|species| Functional::LogPerCapita { species }));
        Observables { sets, functionals }
    }

    pub fn with_functional(f: Functional) -> Self {
        Observables {
            sets: Vec::new(),
            functionals: vec![f],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Occupation {
    pub set: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalAverage {
    pub functional: String,
    pub estimate: RateEstimate,
}

/// Statistics of one replicate's empirical measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalSummary {
    pub replicate: usize,
    pub occupation: Vec<Occupation>,
    pub thinned_samples: Vec<Vec<f64>>,
    pub functional_averages: Vec<FunctionalAverage>,
    pub terminal_state: Vec<f64>,
    pub extinction_flag: bool,
    pub extinction_step: Option<usize>,
}

impl EmpiricalSummary {
    pub fn occupation_of(&self, set: &SetDescriptor) -> Option<f64> {
        let name = set.name();
        self.occupation
            .iter()
            .find(|o| o.set == name)
            .map(|o| o.fraction)
    }

    pub fn average_of(&self, f: &Functional) -> Option<RateEstimate> {
        let name = f.name();
        self.functional_averages
            .iter()
            .find(|a| a.functional == name)
            .map(|a| a.estimate)
    }
}

/// Replicate-averaged statistics, reduced in replicate order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledSummary {
    pub replicates: usize,
    pub occupation: Vec<Occupation>,
    pub functional_averages: Vec<FunctionalAverage>,
    pub extinct_replicates: usize,
}

impl PooledSummary {
    pub fn occupation_of(&self, set: &SetDescriptor) -> Option<f64> {
        let name = set.name();
        self.occupation
            .iter()
            .find(|o| o.set == name)
            .map(|o| o.fraction)
    }

    pub fn average_of(&self, f: &Functional) -> Option<RateEstimate> {
        let name = f.name();
        self.functional_averages
            .iter()
            .find(|a| a.functional == name)
            .map(|a| a.estimate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub replicates: Vec<EmpiricalSummary>,
    pub pooled: PooledSummary,
}

fn pool(replicates: &[EmpiricalSummary]) -> PooledSummary {
    let r = replicates.len();
    let first = &replicates[0];
    let occupation = first
        .occupation
        .iter()
        .enumerate()
        .map(|(j, o)| Occupation {
            set: o.set.clone(),
            fraction: replicates.iter().map(|s| s.occupation[j].fraction).sum::<f64>() / r as f64,
        })
        .collect();
    let functional_averages = first
        .functional_averages
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let parts: Vec<RateEstimate> = replicates
                .iter()
                .map(|s| s.functional_averages[j].estimate)
                .collect();
            FunctionalAverage {
                functional: f.functional.clone(),
                estimate: RateEstimate::pool(&parts),
            }
        })
        .collect();
    PooledSummary {
        replicates: r,
        occupation,
        functional_averages,
        extinct_replicates: replicates.iter().filter(|s| s.extinction_flag).count(),
    }
}

/// Initial state for one replicate. `random_interior` is uniform on
/// `[0.1, 1]` per present coordinate (orthant) or uniform on the part of the
/// face's simplex with every present coordinate at least 0.01.
pub fn initial_state(model: &ModelSpec, cfg: &SimConfig, stream: &Stream) -> Result<Vec<f64>> {
    let support = model.support();
    let simplex = matches!(model.state_space(), StateSpace::Simplex(_));
    let mut x = vec![0.0; model.dim()];
    match &cfg.initial_state {
        InitialState::Vector(v) => {
            if v.len() != model.dim() {
                return Err(Error::config(format!(
                    "initial state has dimension {} but the model has {}",
                    v.len(),
                    model.dim()
                )));
            }
            for &i in &support {
                x[i] = v[i];
            }
            if simplex {
                let total: f64 = x.iter().sum();
                if !(total > 0.0) {
                    return Err(Error::config("initial state has no mass on the face"));
                }
                x.iter_mut().for_each(|v| *v /= total);
            }
        }
        InitialState::Keyword(InitKeyword::RandomInterior) => {
            let mut s = stream.substream(u64::MAX);
            if simplex {
                let e: Vec<f64> = support.iter().map(|_| -(1.0 - s.uniform01()).ln()).collect();
                let total: f64 = e.iter().sum();
                let free = 1.0 - 0.01 * support.len() as f64;
                for (&i, ei) in support.iter().zip(&e) {
                    x[i] = 0.01 + free * ei / total;
                }
                let total: f64 = x.iter().sum();
                x.iter_mut().for_each(|v| *v /= total);
            } else {
                for &i in &support {
                    x[i] = 0.1 + 0.9 * s.uniform01();
                }
            }
        }
    }
    if !model.state_space().contains(&x) {
        return Err(Error::config(format!(
            "initial state {x:?} is not in the state space {:?}",
            model.state_space()
        )));
    }
    Ok(x)
}

enum Repr {
    /// ln of each coordinate; -inf for an absent species.
    Log { y: Vec<f64>, held: Vec<bool> },
    /// `x = exp(scale) * dir` with `|dir|_1 = 1`.
    Scaled { scale: f64, dir: Vec<f64>, held: bool },
}

/// A single trajectory of a catalog model.
pub struct Trajectory<'a> {
    model: &'a ModelSpec,
    sampler: &'a EnvSampler,
    stream: Stream,
    repr: Repr,
    x: Vec<f64>,
    omega: Vec<f64>,
    logf: Vec<f64>,
    work: Vec<f64>,
    simplex: bool,
    steps: usize,
    extinction_step: Option<usize>,
}

impl<'a> Trajectory<'a> {
    pub fn new(
        model: &'a ModelSpec,
        sampler: &'a EnvSampler,
        stream: Stream,
        x0: &[f64],
    ) -> Result<Self> {
        let k = model.dim();
        let repr = if model.is_structured() {
            let total: f64 = x0.iter().sum();
            if total > 0.0 {
                Repr::Scaled {
                    scale: total.ln(),
                    dir: x0.iter().map(|v| v / total).collect(),
                    held: false,
                }
            } else {
                Repr::Scaled {
                    scale: f64::NEG_INFINITY,
                    dir: vec![1.0 / k as f64; k],
                    held: false,
                }
            }
        } else {
            Repr::Log {
                y: x0.iter().map(|v| v.ln()).collect(),
                held: vec![false; k],
            }
        };
        let mut t = Trajectory {
            model,
            sampler,
            stream,
            repr,
            x: x0.to_vec(),
            omega: vec![0.0; sampler.dim()],
            logf: vec![0.0; k],
            work: vec![0.0; k],
            simplex: matches!(model.state_space(), StateSpace::Simplex(_)),
            steps: 0,
            extinction_step: None,
        };
        t.apply_floor();
        t.refresh_state();
        Ok(t)
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn extinct(&self) -> bool {
        self.extinction_step.is_some()
    }

    pub fn extinction_step(&self) -> Option<usize> {
        self.extinction_step
    }

    /// `ln f_i(X_{s-1}, xi_s)` from the most recent step.
    pub fn last_log_factors(&self) -> &[f64] {
        &self.logf
    }

    pub fn last_env(&self) -> &[f64] {
        &self.omega
    }

    pub fn log_norm(&self) -> f64 {
        match &self.repr {
            Repr::Scaled { scale, .. } => *scale,
            Repr::Log { y, .. } => {
                let m = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    m
                } else {
                    m + y.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
                }
            }
        }
    }

    fn refresh_state(&mut self) {
        match &self.repr {
            Repr::Log { y, .. } => {
                for (xi, yi) in self.x.iter_mut().zip(y) {
                    *xi = yi.exp();
                }
            }
            Repr::Scaled { scale, dir, .. } => {
                let s = scale.exp();
                for (xi, d) in self.x.iter_mut().zip(dir) {
                    *xi = s * d;
                }
            }
        }
    }

    fn apply_floor(&mut self) {
        let step = self.steps;
        match &mut self.repr {
            Repr::Log { y, held } => {
                for (yi, h) in y.iter_mut().zip(held.iter_mut()) {
                    if !*h && yi.is_finite() && *yi < EXTINCTION_FLOOR_LOG {
                        *yi = EXTINCTION_FLOOR_LOG;
                        *h = true;
                        self.extinction_step.get_or_insert(step);
                    }
                }
            }
            Repr::Scaled { scale, held, .. } => {
                if !*held && scale.is_finite() && *scale < EXTINCTION_FLOOR_LOG {
                    *scale = EXTINCTION_FLOOR_LOG;
                    *held = true;
                    self.extinction_step.get_or_insert(step);
                }
            }
        }
    }

    /// Draws `xi_{s+1}` and moves to `X_{s+1}`.
    pub fn advance(&mut self) -> Result<()> {
        self.sampler.sample_into(&mut self.stream, &mut self.omega);
        match &mut self.repr {
            Repr::Log { y, held } => {
                self.model.log_factors(&self.x, &self.omega, &mut self.logf)?;
                for ((yi, h), lf) in y.iter_mut().zip(held.iter()).zip(&self.logf) {
                    if !*h {
                        *yi += lf;
                    }
                }
                if self.simplex {
                    let m = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + y.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    for (yi, h) in y.iter_mut().zip(held.iter()) {
                        if !*h {
                            *yi -= lse;
                        }
                    }
                }
            }
            Repr::Scaled { scale, dir, held } => {
                let a = self.model.matrix_at(&self.x, &self.omega)?;
                a.mul_vec_into(dir, &mut self.work);
                let norm: f64 = self.work.iter().sum();
                if !(norm > 0.0) {
                    return Err(Error::ModelViolation(format!(
                        "projection collapsed to the zero vector at step {}",
                        self.steps
                    )));
                }
                self.logf[0] = norm.ln();
                if !*held {
                    *scale += norm.ln();
                    for (d, w) in dir.iter_mut().zip(&self.work) {
                        *d = w / norm;
                    }
                }
            }
        }
        self.steps += 1;
        self.apply_floor();
        self.refresh_state();
        if self.x.iter().any(|v| !v.is_finite()) || self.logf.iter().any(|v| v.is_nan()) {
            return Err(Error::NumericOverflow {
                step: Some(self.steps),
                state: self.x.clone(),
            });
        }
        Ok(())
    }
}

/// Records occupation, thinned samples and functional averages over the
/// post-burn-in window.
struct Recorder<'o> {
    obs: &'o Observables,
    ext: ExtinctionSet,
    counts: Vec<usize>,
    samples: usize,
    thinning: usize,
    thinned: Vec<Vec<f64>>,
    accs: Vec<BatchAccumulator>,
}

impl<'o> Recorder<'o> {
    fn new(obs: &'o Observables, ext: ExtinctionSet, cfg: &SimConfig) -> Result<Self> {
        let n = cfg.samples();
        Ok(Recorder {
            obs,
            ext,
            counts: vec![0; obs.sets.len()],
            samples: 0,
            thinning: cfg.thinning,
            thinned: Vec::new(),
            accs: obs
                .functionals
                .iter()
                .map(|_| BatchAccumulator::new(n, DEFAULT_BATCHES))
                .collect::<Result<_>>()?,
        })
    }

    /// `logf` holds `ln f_i(x, xi_next)`.
    fn record(&mut self, x: &[f64], log_norm: f64, logf: &[f64]) {
        for (c, set) in self.counts.iter_mut().zip(&self.obs.sets) {
            if set.contains(x, self.ext) {
                *c += 1;
            }
        }
        if self.samples % self.thinning == 0 {
            self.thinned.push(x.to_vec());
        }
        for (acc, f) in self.accs.iter_mut().zip(&self.obs.functionals) {
            let v = match f {
                Functional::Coordinate { index } => x[*index],
                Functional::LogPerCapita { species } => logf[*species],
                Functional::Indicator { set } => {
                    if set.contains(x, self.ext) {
                        1.0
                    } else {
                        0.0
                    }
                }
                Functional::LogNorm => log_norm,
            };
            acc.push(v);
        }
        self.samples += 1;
    }

    fn finish(
        self,
        replicate: usize,
        terminal_state: Vec<f64>,
        extinction_step: Option<usize>,
    ) -> EmpiricalSummary {
        let n = self.samples.max(1) as f64;
        EmpiricalSummary {
            replicate,
            occupation: self
                .obs
                .sets
                .iter()
                .zip(&self.counts)
                .map(|(s, c)| Occupation {
                    set: s.name(),
                    fraction: *c as f64 / n,
                })
                .collect(),
            thinned_samples: self.thinned,
            functional_averages: self
                .obs
                .functionals
                .iter()
                .zip(&self.accs)
                .map(|(f, a)| FunctionalAverage {
                    functional: f.name(),
                    estimate: a.finish(),
                })
                .collect(),
            terminal_state,
            extinction_flag: extinction_step.is_some(),
            extinction_step,
        }
    }
}

fn prepare(model: &ModelSpec, env: &EnvSpec, cfg: &SimConfig) -> Result<EnvSampler> {
    cfg.validate()?;
    let sampler = env.sampler()?;
    model.validate(env.dim())?;
    Ok(sampler)
}

fn run_replicate(
    model: &ModelSpec,
    sampler: &EnvSampler,
    cfg: &SimConfig,
    obs: &Observables,
    replicate: usize,
) -> Result<EmpiricalSummary> {
    let stream = make_stream(cfg.seed, replicate as u64);
    let x0 = initial_state(model, cfg, &stream)?;
    let mut traj = Trajectory::new(model, sampler, stream, &x0)?;
    let mut rec = Recorder::new(obs, model.extinction_set(), cfg)?;
    let mut current = x0;
    let mut log_norm = traj.log_norm();
    for s in 0..cfg.horizon {
        traj.advance()?;
        if s >= cfg.burn_in {
            rec.record(&current, log_norm, traj.last_log_factors());
        }
        current.copy_from_slice(traj.state());
        log_norm = traj.log_norm();
    }
    Ok(rec.finish(replicate, current, traj.extinction_step()))
}

fn collect_ordered<T: Send>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Simulates `cfg.replicates` independent trajectories (in parallel, one
/// stream each) and summarizes their empirical measures.
pub fn simulate(
    model: &ModelSpec,
    env: &EnvSpec,
    cfg: &SimConfig,
    obs: &Observables,
) -> Result<SimulationReport> {
    let sampler = prepare(model, env, cfg)?;
    for s in &obs.sets {
        s.validate(model.dim())?;
    }
    for f in &obs.functionals {
        f.validate(model)?;
    }
    let results: Vec<Result<EmpiricalSummary>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(model, &sampler, cfg, obs, r))
        .collect();
    let replicates = collect_ordered(results)?;
    let pooled = pool(&replicates);
    Ok(SimulationReport { replicates, pooled })
}

/// Time average `(1/(T-B)) sum_{s=B}^{T-1} h(X_s)`, pooled over replicates,
/// with batch-means standard error.
pub fn ergodic_average(
    model: &ModelSpec,
    env: &EnvSpec,
    cfg: &SimConfig,
    functional: &Functional,
) -> Result<RateEstimate> {
    let report = simulate(
        model,
        env,
        cfg,
        &Observables::with_functional(functional.clone()),
    )?;
    Ok(report.pooled.functional_averages[0].estimate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HitEstimate {
    pub probability: f64,
    /// Binomial standard error `sqrt(p (1 - p) / R)`.
    pub std_error: f64,
    pub hits: usize,
    pub replicates: usize,
}

/// Fraction of replicates with `X_t` in `set`.
pub fn ensemble_hit_probability(
    model: &ModelSpec,
    env: &EnvSpec,
    cfg: &SimConfig,
    set: &SetDescriptor,
    t: usize,
) -> Result<HitEstimate> {
    let sampler = prepare(model, env, cfg)?;
    set.validate(model.dim())?;
    if t > cfg.horizon {
        return Err(Error::config(format!(
            "time {t} exceeds the horizon {}",
            cfg.horizon
        )));
    }
    let ext = model.extinction_set();
    let results: Vec<Result<bool>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let stream = make_stream(cfg.seed, r as u64);
            let x0 = initial_state(model, cfg, &stream)?;
            let mut traj = Trajectory::new(model, &sampler, stream, &x0)?;
            for _ in 0..t {
                traj.advance()?;
            }
            Ok(set.contains(traj.state(), ext))
        })
        .collect();
    let hits = collect_ordered(results)?.into_iter().filter(|h| *h).count();
    let r = cfg.replicates as f64;
    let p = hits as f64 / r;
    Ok(HitEstimate {
        probability: p,
        std_error: (p * (1.0 - p) / r).sqrt(),
        hits,
        replicates: cfg.replicates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineChainReport {
    pub summary: SimulationReport,
    /// Mean of `ln Z` in each of 20 equal post-burn-in windows, replicate 0.
    pub window_log_means: Vec<f64>,
    pub diverging_replicates: Vec<usize>,
    pub divergence: bool,
}

const DIVERGENCE_WINDOWS: usize = 20;
const DIVERGENCE_RUN: usize = 10;

fn increasing_run(means: &[f64]) -> usize {
    means
        .windows(2)
        .rev()
        .take_while(|w| w[1] > w[0])
        .count()
}

/// `ln(exp(a) + exp(b))`.
fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + (-(a - b).abs()).exp().ln_1p()
    }
}

/// Simulates the dominating chain `Z_{t+1} = alpha_{t+1} Z_t + beta_{t+1}`
/// with independent `alpha`, `beta` draws, in log space.
///
/// Divergence is flagged when the window means of `ln Z` increase over the
/// last ten consecutive windows; it is reported, not raised.
pub fn auxiliary_affine_chain(
    alpha: &ScalarDist,
    beta: &ScalarDist,
    cfg: &SimConfig,
    obs: &Observables,
) -> Result<AffineChainReport> {
    cfg.validate()?;
    let sampler = EnvSpec::new(vec![alpha.clone(), beta.clone()]).sampler()?;
    for s in &obs.sets {
        s.validate(1)?;
    }
    for f in &obs.functionals {
        if matches!(f, Functional::LogPerCapita { .. }) {
            return Err(Error::config("the affine chain has no per-capita growth"));
        }
    }
    let z0 = match &cfg.initial_state {
        InitialState::Vector(v) if v.len() == 1 && v[0] >= 0.0 => Some(v[0]),
        InitialState::Vector(_) => {
            return Err(Error::config("affine chain needs a scalar nonnegative start"))
        }
        InitialState::Keyword(_) => None,
    };
    let n = cfg.samples();
    let window = (n / DIVERGENCE_WINDOWS).max(1);
    let results: Vec<Result<(EmpiricalSummary, Vec<f64>)>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut stream = make_stream(cfg.seed, r as u64);
            let start = match z0 {
                Some(z) => z,
                None => 0.1 + 0.9 * stream.substream(u64::MAX).uniform01(),
            };
            let mut log_z = start.ln();
            let mut rec = Recorder::new(obs, ExtinctionSet::Origin, cfg)?;
            let mut omega = [0.0; 2];
            let mut window_sums = vec![0.0; DIVERGENCE_WINDOWS];
            let mut window_counts = vec![0usize; DIVERGENCE_WINDOWS];
            for s in 0..cfg.horizon {
                if s >= cfg.burn_in {
                    let z = log_z.exp();
                    rec.record(&[z], log_z, &[]);
                    let w = ((s - cfg.burn_in) / window).min(DIVERGENCE_WINDOWS - 1);
                    window_sums[w] += log_z;
                    window_counts[w] += 1;
                }
                sampler.sample_into(&mut stream, &mut omega);
                if omega[0] < 0.0 || omega[1] < 0.0 {
                    return Err(Error::config(format!(
                        "affine chain coefficients must be nonnegative, drew {omega:?}"
                    )));
                }
                log_z = log_add(omega[0].ln() + log_z, omega[1].ln());
                if log_z.is_nan() {
                    return Err(Error::NumericOverflow {
                        step: Some(s + 1),
                        state: vec![log_z],
                    });
                }
            }
            let means: Vec<f64> = window_sums
                .iter()
                .zip(&window_counts)
                .filter(|(_, c)| **c > 0)
                .map(|(s, c)| s / *c as f64)
                .collect();
            Ok((rec.finish(r, vec![log_z.exp()], None), means))
        })
        .collect();
    let results = collect_ordered(results)?;
    let diverging_replicates: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, (_, m))| increasing_run(m) >= DIVERGENCE_RUN)
        .map(|(i, _)| i)
        .collect();
    let window_log_means = results[0].1.clone();
    let replicates: Vec<EmpiricalSummary> = results.into_iter().map(|(s, _)| s).collect();
    let pooled = pool(&replicates);
    Ok(AffineChainReport {
        summary: SimulationReport { replicates, pooled },
        window_log_means,
        divergence: !diverging_replicates.is_empty(),
        diverging_replicates,
    })
}
