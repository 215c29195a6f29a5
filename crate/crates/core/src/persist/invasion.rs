use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::growth_rates_at;
use crate::engine::{initial_state, InitialState, Observables, SimConfig, Trajectory};
use crate::env::{make_stream, EnvSpec};
use crate::error::{Error, Result};
use crate::models::{ExtinctionSet, FaceModel, ModelSpec, StateSpace};
use crate::stats::{BatchAccumulator, RateEstimate, Sign, DECISION_Z, DEFAULT_BATCHES};

/// Largest species count whose faces are enumerated exhaustively.
pub const MAX_SPECIES: usize = 6;

fn check_support(model: &ModelSpec, support: &[usize]) -> Result<Vec<usize>> {
    let mut s = support.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.len() != support.len() {
        return Err(Error::config(format!("support {support:?} repeats a species")));
    }
    if let Some(bad) = s.iter().find(|&&i| i >= model.dim()) {
        return Err(Error::config(format!(
            "species {bad} out of range for {} species",
            model.dim()
        )));
    }
    Ok(s)
}

fn face_config(model: &ModelSpec, face: &FaceModel, cfg: &SimConfig) -> Result<SimConfig> {
    let mut out = cfg.clone();
    if let InitialState::Vector(v) = &cfg.initial_state {
        if v.len() != model.dim() {
            return Err(Error::config(format!(
                "initial state has dimension {} but {} has {} species",
                v.len(),
                model.name(),
                model.dim()
            )));
        }
        let mut start: Vec<f64> = if face.model.dim() == model.dim() {
            let support = face.model.support();
            (0..v.len())
                .map(|i| if support.contains(&i) { v[i] } else { 0.0 })
                .collect()
        } else {
            face.embedding.iter().map(|&i| v[i]).collect()
        };
        if matches!(face.model.state_space(), StateSpace::Simplex(_)) {
            let total: f64 = start.iter().sum();
            if !(total > 0.0) {
                return Err(Error::config("initial state has no mass on the face"));
            }
            start.iter_mut().for_each(|x| *x /= total);
        }
        out.initial_state = InitialState::Vector(start);
    }
    Ok(out)
}

fn embed(face: &FaceModel, full_dim: usize, x: &[f64], out: &mut [f64]) {
    if x.len() == full_dim {
        out.copy_from_slice(x);
    } else {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&i, v) in face.embedding.iter().zip(x) {
            out[i] = *v;
        }
    }
}

/// Time averages of `ln f_i(X_s, xi_{s+1})` for every species `i` along the
/// trajectory of the face with the given support, pooled over replicates.
pub(crate) fn face_rates(
    model: &ModelSpec,
    env: &EnvSpec,
    cfg: &SimConfig,
    support: &[usize],
) -> Result<Vec<RateEstimate>> {
    cfg.validate()?;
    model.validate(env.dim())?;
    let support = check_support(model, support)?;
    let face = model.restrict_to_face(&support)?;
    let face_cfg = face_config(model, &face, cfg)?;
    let sampler = env.sampler()?;
    let k = model.dim();
    let per_rep: Vec<Result<Vec<RateEstimate>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let stream = make_stream(cfg.seed, r as u64);
            let x0 = initial_state(&face.model, &face_cfg, &stream)?;
            let mut traj = Trajectory::new(&face.model, &sampler, stream, &x0)?;
            let mut accs = (0..k)
                .map(|_| BatchAccumulator::new(cfg.samples(), DEFAULT_BATCHES))
                .collect::<Result<Vec<_>>>()?;
            let mut x = vec![0.0; k];
            let mut logf = vec![0.0; k];
            for s in 0..cfg.horizon {
                embed(&face, k, traj.state(), &mut x);
                traj.advance()?;
                if traj.extinct() {
                    return Err(Error::FaceDegenerate {
                        support: support.clone(),
                        replicate: r,
                    });
                }
                if s >= cfg.burn_in {
                    model.log_factors(&x, traj.last_env(), &mut logf)?;
                    for (a, l) in accs.iter_mut().zip(&logf) {
                        a.push(*l);
                    }
                }
            }
            Ok(accs.iter().map(BatchAccumulator::finish).collect())
        })
        .collect();
    let per_rep: Vec<Vec<RateEstimate>> = per_rep.into_iter().collect::<Result<_>>()?;
    Ok((0..k)
        .map(|i| {
            let parts: Vec<RateEstimate> = per_rep.iter().map(|v| v[i]).collect();
            RateEstimate::pool(&parts)
        })
        .collect())
}

/// Ergodic estimate of the invasion rate `lambda_i(mu)` of `invader` against
/// the sampled ergodic measure of the face `resident_support`: the time
/// average of `ln f_invader(X_s, xi_{s+1})` along a face trajectory started
/// in the face interior.
pub fn invasion_rate(
    model: &ModelSpec,
    env: &EnvSpec,
    cfg: &SimConfig,
    invader: usize,
    resident_support: &[usize],
) -> Result<RateEstimate> {
    if invader >= model.dim() {
        return Err(Error::config(format!(
            "invader {invader} out of range for {} species",
            model.dim()
        )));
    }
    if resident_support.contains(&invader) {
        return Err(Error::config(format!(
            "invader {invader} is part of the resident support {resident_support:?}"
        )));
    }
    if resident_support.is_empty() {
        return Err(Error::config("resident support must be nonempty"));
    }
    Ok(face_rates(model, env, cfg, resident_support)?.swap_remove(invader))
}

/// Thinned post-burn-in states of the face trajectory, embedded in the full
/// state space, replicate by replicate.
pub fn face_samples(
    model: &ModelSpec,
    env: &EnvSpec,
    cfg: &SimConfig,
    support: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let support = check_support(model, support)?;
    let face = model.restrict_to_face(&support)?;
    let face_cfg = face_config(model, &face, cfg)?;
    let rep = crate::engine::simulate(&face.model, env, &face_cfg, &Observables::default())?;
    let k = model.dim();
    let mut out = Vec::new();
    for r in &rep.replicates {
        if r.extinction_flag {
            return Err(Error::FaceDegenerate {
                support: support.clone(),
                replicate: r.replicate,
            });
        }
        for x in &r.thinned_samples {
            let mut full = vec![0.0; k];
            embed(&face, k, x, &mut full);
            out.push(full);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowSource {
    /// Time averages along a simulated face trajectory (the sampled ergodic
    /// measure of that face).
    Simulated,
    /// A Dirac measure at a boundary fixed point, averaged over independent
    /// environment draws.
    Dirac { state: Vec<f64> },
    /// The face could not be sampled.
    Degenerate { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    /// Some missing species has a rate above 3·SE.
    Invadable,
    /// Every missing species has a rate below -3·SE.
    NotInvadable,
    Inconclusive,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvasionRow {
    pub support: Vec<usize>,
    pub source: RowSource,
    /// `lambda_i(mu)` for every species `i`; empty for degenerate rows.
    pub rates: Vec<RateEstimate>,
    pub status: RowStatus,
    /// Whether every supported species has a rate within 3·SE of zero.
    pub stationarity_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PermanenceVerdict {
    Persistent,
    Inconclusive,
    NotPermanent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvasionTable {
    pub species: usize,
    pub rows: Vec<InvasionRow>,
    pub verdict: PermanenceVerdict,
}

fn row_status(support: &[usize], rates: &[RateEstimate]) -> (RowStatus, bool) {
    let outside: Vec<Sign> = (0..rates.len())
        .filter(|i| !support.contains(i))
        .map(|i| rates[i].sign())
        .collect();
    let status = if outside.contains(&Sign::Positive) {
        RowStatus::Invadable
    } else if !outside.is_empty() && outside.iter().all(|s| *s == Sign::Negative) {
        RowStatus::NotInvadable
    } else {
        RowStatus::Inconclusive
    };
    let stationary = support
        .iter()
        .all(|&i| rates[i].mean.abs() <= DECISION_Z * rates[i].std_error + 1e-12);
    (status, stationary)
}

fn vertex(k: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[i] = 1.0;
    v
}

/// Enumerates the boundary faces of `model`, estimates `lambda_i(mu)` for
/// one ergodic measure per face, and applies the invasion criterion: the
/// verdict is `Persistent` when every face has a missing species invading
/// at 3·SE, `NotPermanent` when some face has every missing species
/// declining at 3·SE, and `Inconclusive` otherwise.
///
/// Faces of the rock-paper-scissors lottery are represented by the three
/// vertex Dirac measures, single-species faces of simplex models by their
/// vertex, and the origin of orthant models by its Dirac measure; all other
/// faces are simulated from an interior start. `dirac_draws` environment
/// draws back each Dirac row.
pub fn boundary_invasion_report(
    model: &ModelSpec,
    env: &EnvSpec,
    cfg: &SimConfig,
    dirac_draws: usize,
) -> Result<InvasionTable> {
    cfg.validate()?;
    model.validate(env.dim())?;
    let k = model.dim();
    if model.is_structured() {
        return Err(Error::config(format!(
            "{} is structured; use the lyapunov exponent of A(0, w) instead",
            model.name()
        )));
    }
    if k > MAX_SPECIES {
        return Err(Error::config(format!(
            "boundary enumeration supports at most {MAX_SPECIES} species, got {k}"
        )));
    }
    if dirac_draws < super::MIN_GROWTH_DRAWS {
        return Err(Error::config(format!(
            "dirac_draws must be at least {}",
            super::MIN_GROWTH_DRAWS
        )));
    }
    let simplex = matches!(model.state_space(), StateSpace::Simplex(_));
    let rps = matches!(model, ModelSpec::RpsLottery { .. });
    let mut supports: Vec<Vec<usize>> = Vec::new();
    if !simplex {
        supports.push(Vec::new());
    }
    if model.extinction_set() == ExtinctionSet::CoordinateUnion {
        let mut proper: Vec<Vec<usize>> = (1u32..(1 << k) - 1)
            .map(|mask| (0..k).filter(|i| mask & (1 << i) != 0).collect())
            .collect();
        proper.sort_by(|a: &Vec<usize>, b| a.len().cmp(&b.len()).then(a.cmp(b)));
        if rps {
            proper.retain(|s| s.len() == 1);
        }
        supports.extend(proper);
    }

    let stream = make_stream(cfg.seed, 0);
    let mut rows = Vec::with_capacity(supports.len());
    for (idx, support) in supports.into_iter().enumerate() {
        let dirac = if support.is_empty() {
            Some(vec![0.0; k])
        } else if simplex && support.len() == 1 {
            Some(vertex(k, support[0]))
        } else {
            None
        };
        let (source, rates) = match dirac {
            Some(state) => {
                let rates =
                    growth_rates_at(model, env, &state, dirac_draws, stream.substream(idx as u64))?;
                (RowSource::Dirac { state }, rates)
            }
            None => match face_rates(model, env, cfg, &support) {
                Ok(r) => (RowSource::Simulated, r),
                Err(e @ Error::FaceDegenerate { .. }) => {
                    rows.push(InvasionRow {
                        support,
                        source: RowSource::Degenerate {
                            reason: e.to_string(),
                        },
                        rates: Vec::new(),
                        status: RowStatus::Degenerate,
                        stationarity_ok: false,
                    });
                    continue;
                }
                Err(e) => return Err(e),
            },
        };
        let (status, stationarity_ok) = row_status(&support, &rates);
        rows.push(InvasionRow {
            support,
            source,
            rates,
            status,
            stationarity_ok,
        });
    }
    let verdict = if rows.iter().any(|r| r.status == RowStatus::NotInvadable) {
        PermanenceVerdict::NotPermanent
    } else if rows.iter().all(|r| r.status == RowStatus::Invadable) {
        PermanenceVerdict::Persistent
    } else {
        PermanenceVerdict::Inconclusive
    };
    Ok(InvasionTable {
        species: k,
        rows,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSearch {
    pub feasible: bool,
    /// The maximin weights found (strictly positive, summing to one).
    pub weights: Vec<f64>,
    /// `min_rows [sum_i p_i lambda_i(mu) - 3 sqrt(sum_i p_i^2 se_i^2)]`.
    pub margin: f64,
    pub rows_used: usize,
    /// Supports of degenerate rows left out of the search.
    pub rows_skipped: Vec<Vec<usize>>,
}

fn grid_resolution(k: usize) -> usize {
    match k {
        0..=3 => 200,
        4 => 48,
        5 => 20,
        _ => 12,
    }
}

fn robust_score(p: &[f64], rows: &[&InvasionRow]) -> f64 {
    rows.iter()
        .map(|row| {
            let mean: f64 = p.iter().zip(&row.rates).map(|(w, r)| w * r.mean).sum();
            let var: f64 = p
                .iter()
                .zip(&row.rates)
                .map(|(w, r)| (w * r.std_error).powi(2))
                .sum();
            mean - DECISION_Z * var.sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Compositions of `n` into `k` positive parts, in lexicographic order.
fn compositions(n: usize, k: usize, prefix: &mut Vec<usize>, out: &mut dyn FnMut(&[usize])) {
    if k == 1 {
        prefix.push(n);
        out(prefix);
        prefix.pop();
        return;
    }
    for first in 1..=n - (k - 1) {
        prefix.push(first);
        compositions(n - first, k - 1, prefix, out);
        prefix.pop();
    }
}

/// Searches for positive weights `p` with `sum_i p_i lambda_i(mu) > 0` on
/// every row, robustly: each row's combination must clear three aggregated
/// standard errors. Grid search over the open simplex (always including the
/// barycenter) followed by a pairwise-exchange pattern search.
pub fn find_persistence_weights(table: &InvasionTable) -> WeightSearch {
    let k = table.species;
    let rows: Vec<&InvasionRow> = table
        .rows
        .iter()
        .filter(|r| r.rates.len() == k)
        .collect();
    let rows_skipped: Vec<Vec<usize>> = table
        .rows
        .iter()
        .filter(|r| r.rates.len() != k)
        .map(|r| r.support.clone())
        .collect();
    let mut best = vec![1.0 / k as f64; k];
    let mut best_score = robust_score(&best, &rows);
    if k > 1 {
        let n = grid_resolution(k);
        let mut p = vec![0.0; k];
        compositions(n, k, &mut Vec::with_capacity(k), &mut |c| {
            for (pi, ci) in p.iter_mut().zip(c) {
                *pi = *ci as f64 / n as f64;
            }
            let s = robust_score(&p, &rows);
            if s > best_score {
                best_score = s;
                best.copy_from_slice(&p);
            }
        });
        let mut h = 1.0 / n as f64;
        let mut iterations = 0;
        while h > 1e-9 && iterations < 10_000 {
            iterations += 1;
            let mut improved = false;
            for i in 0..k {
                for j in 0..k {
                    if i == j || best[j] - h <= 1e-12 {
                        continue;
                    }
                    let mut q = best.clone();
                    q[i] += h;
                    q[j] -= h;
                    let s = robust_score(&q, &rows);
                    if s > best_score + 1e-15 * (1.0 + best_score.abs()) {
                        best = q;
                        best_score = s;
                        improved = true;
                    }
                }
            }
            if !improved {
                h *= 0.5;
            }
        }
    }
    WeightSearch {
        feasible: !rows.is_empty() && best_score > 0.0,
        weights: best,
        margin: best_score,
        rows_used: rows.len(),
        rows_skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ScalarDist;
    use crate::models::Wire;

    fn exact_row(support: Vec<usize>, rates: &[f64]) -> InvasionRow {
        let rates: Vec<RateEstimate> = rates.iter().map(|v| RateEstimate::exact(*v)).collect();
        let (status, stationarity_ok) = row_status(&support, &rates);
        InvasionRow {
            support,
            source: RowSource::Simulated,
            rates,
            status,
            stationarity_ok,
        }
    }

    #[test]
    fn all_negative_row_is_infeasible() {
        let table = InvasionTable {
            species: 2,
            rows: vec![
                exact_row(vec![0], &[0.0, 0.4]),
                exact_row(vec![], &[-0.1, -0.2]),
            ],
            verdict: PermanenceVerdict::NotPermanent,
        };
        assert_eq!(table.rows[1].status, RowStatus::NotInvadable);
        let w = find_persistence_weights(&table);
        assert!(!w.feasible);
    }

    #[test]
    fn single_species_weight_is_one() {
        let table = InvasionTable {
            species: 1,
            rows: vec![exact_row(vec![], &[0.3])],
            verdict: PermanenceVerdict::Persistent,
        };
        let w = find_persistence_weights(&table);
        assert!(w.feasible);
        assert_eq!(w.weights, vec![1.0]);
        assert_eq!(w.margin, 0.3);
    }

    #[test]
    fn cyclic_table_prefers_barycenter() {
        let (a, b) = (0.05, -0.03);
        let table = InvasionTable {
            species: 3,
            rows: vec![
                exact_row(vec![0], &[0.0, b, a]),
                exact_row(vec![1], &[a, 0.0, b]),
                exact_row(vec![2], &[b, a, 0.0]),
            ],
            verdict: PermanenceVerdict::Persistent,
        };
        let w = find_persistence_weights(&table);
        assert!(w.feasible);
        for p in &w.weights {
            assert!((p - 1.0 / 3.0).abs() < 1e-6);
        }
        assert!((w.margin - (a + b) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn compositions_are_positive_and_complete() {
        let mut count = 0;
        compositions(6, 3, &mut Vec::new(), &mut |c| {
            assert!(c.iter().all(|x| *x >= 1));
            assert_eq!(c.iter().sum::<usize>(), 6);
            count += 1;
        });
        // C(5, 2)
        assert_eq!(count, 10);
    }

    #[test]
    fn deterministic_lottery_exclusion() {
        let m = ModelSpec::Lottery {
            d: 0.2,
            fecundity: vec![Wire::Const(2.0), Wire::Const(1.0)],
        };
        let cfg = SimConfig {
            horizon: 200,
            burn_in: 10,
            ..SimConfig::default()
        };
        let t = boundary_invasion_report(&m, &EnvSpec::default(), &cfg, 1000).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].status, RowStatus::NotInvadable);
        assert_eq!(t.rows[1].status, RowStatus::Invadable);
        assert_eq!(t.verdict, PermanenceVerdict::NotPermanent);
    }

    #[test]
    fn invader_inside_support_rejected() {
        let m = ModelSpec::RickerCompetition {
            r: [Wire::Coord(0), Wire::Coord(1)],
            alpha: [0.6, 0.5],
        };
        let env = EnvSpec::new(vec![ScalarDist::constant(1.0), ScalarDist::constant(0.8)]);
        let cfg = SimConfig::default();
        assert!(invasion_rate(&m, &env, &cfg, 0, &[0]).is_err());
        assert!(invasion_rate(&m, &env, &cfg, 2, &[0]).is_err());
    }

    #[test]
    fn degenerate_face_is_reported() {
        // the resident declines on its own face
        let m = ModelSpec::RickerCompetition {
            r: [Wire::Const(-0.5), Wire::Const(1.0)],
            alpha: [0.5, 0.5],
        };
        let cfg = SimConfig {
            horizon: 3000,
            burn_in: 10,
            ..SimConfig::default()
        };
        assert!(matches!(
            invasion_rate(&m, &EnvSpec::default(), &cfg, 1, &[0]),
            Err(Error::FaceDegenerate { .. })
        ));
        let t = boundary_invasion_report(&m, &EnvSpec::default(), &cfg, 1000).unwrap();
        assert_eq!(t.rows[1].status, RowStatus::Degenerate);
        // species 0 cannot invade species 1's equilibrium either
        assert_eq!(t.rows[2].status, RowStatus::NotInvadable);
        assert_eq!(t.verdict, PermanenceVerdict::NotPermanent);
    }
}
