use popdyn_core::engine::{auxiliary_affine_chain, InitialState};
use popdyn_core::persist::{
    boundary_invasion_report, find_persistence_weights, invasion_rate, mean_percapita_growth_at,
    PermanenceVerdict, RowSource,
};
use popdyn_core::{
    ensemble_hit_probability, ergodic_average, EnvSpec, Functional, ModelSpec, Observables,
    ScalarDist, SetDescriptor, SimConfig, Wire,
};

fn lognormal(m: f64, s: f64) -> ScalarDist {
    ScalarDist::LogNormal {
        log_mean: m,
        log_sd: s,
    }
}

fn two_lottery(d: f64) -> (ModelSpec, EnvSpec) {
    (
        ModelSpec::Lottery {
            d,
            fecundity: vec![Wire::Coord(0), Wire::Coord(1)],
        },
        EnvSpec::new(vec![lognormal(1.0, 0.3); 2]),
    )
}

#[test]
fn symmetric_lottery_shares_space_evenly() {
    let (m, env) = two_lottery(0.5);
    let cfg = SimConfig {
        seed: 1,
        replicates: 4,
        burn_in: 1000,
        horizon: 50_000,
        initial_state: InitialState::Vector(vec![0.5, 0.5]),
        ..Default::default()
    };
    let x = ergodic_average(&m, &env, &cfg, &Functional::Coordinate { index: 0 }).unwrap();
    assert!((x.mean - 0.5).abs() <= 3.0 * x.std_error, "{x:?}");
    for species in 0..2 {
        let g = ergodic_average(&m, &env, &cfg, &Functional::LogPerCapita { species }).unwrap();
        assert!(g.mean.abs() <= 3.0 * g.std_error, "species {species}: {g:?}");
    }
}

#[test]
fn lottery_invasion_rates_are_exchangeable() {
    let (m, env) = two_lottery(0.1);
    let cfg = SimConfig {
        seed: 2,
        replicates: 2,
        burn_in: 100,
        horizon: 20_000,
        ..Default::default()
    };
    let a = invasion_rate(&m, &env, &cfg, 0, &[1]).unwrap();
    let b = invasion_rate(&m, &env, &cfg, 1, &[0]).unwrap();
    let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!((a.mean - b.mean).abs() <= 3.0 * se);
}

#[test]
fn hassell_hit_probabilities() {
    let m = ModelSpec::Hassell {
        lambda: Wire::Coord(0),
        b: Wire::Const(1.0),
    };
    let near = SetDescriptor::ExtinctionNeighborhood { eta: 0.01 };
    let cfg = SimConfig {
        seed: 3,
        replicates: 40,
        burn_in: 0,
        horizon: 5000,
        ..Default::default()
    };
    let doomed = EnvSpec::new(vec![lognormal(-0.2, 0.3)]);
    let h = ensemble_hit_probability(&m, &doomed, &cfg, &near, 5000).unwrap();
    assert_eq!(h.probability, 1.0);
    let safe = EnvSpec::new(vec![lognormal(0.3, 0.3)]);
    let h = ensemble_hit_probability(&m, &safe, &cfg, &near, 5000).unwrap();
    assert!(h.probability <= 0.05, "{h:?}");
}

#[test]
fn affine_chain_tail_shrinks_with_radius() {
    let cfg = SimConfig {
        seed: 4,
        replicates: 2,
        burn_in: 100,
        horizon: 50_000,
        initial_state: InitialState::Vector(vec![1.0]),
        ..Default::default()
    };
    let radii = [1.0, 2.0, 4.0, 8.0, 16.0];
    let obs = Observables {
        sets: radii
            .iter()
            .map(|&radius| SetDescriptor::OutsideBall { radius })
            .collect(),
        functionals: vec![],
    };
    let r = auxiliary_affine_chain(&lognormal(-0.3, 0.5), &ScalarDist::constant(1.0), &cfg, &obs)
        .unwrap();
    assert!(!r.divergence);
    let occ: Vec<f64> = r.summary.pooled.occupation.iter().map(|o| o.fraction).collect();
    assert!(occ.windows(2).all(|w| w[1] <= w[0]), "{occ:?}");
    assert!(*occ.last().unwrap() < 0.05, "{occ:?}");
}

#[test]
fn competition_growth_at_origin_is_r() {
    let m = ModelSpec::RickerCompetition {
        r: [Wire::Coord(0), Wire::Coord(1)],
        alpha: [0.5, 0.6],
    };
    let env = EnvSpec::new(vec![
        ScalarDist::Normal {
            mean: 1.0,
            sd: 0.3,
        },
        ScalarDist::Normal {
            mean: 0.8,
            sd: 0.3,
        },
    ]);
    let g = mean_percapita_growth_at(&m, &env, &[0.0, 0.0], 0, 50_000, 5).unwrap();
    assert!((g.mean - 1.0).abs() <= 3.0 * g.std_error);
}

#[test]
fn rps_vertex_rows_are_analytic() {
    let m = ModelSpec::RpsLottery {
        d: 0.1,
        alpha: Wire::Const(3.0),
        beta: Wire::Const(2.0),
        gamma: Wire::Const(1.0),
    };
    let table = boundary_invasion_report(&m, &EnvSpec::default(), &SimConfig::default(), 1000)
        .unwrap();
    assert_eq!(table.rows.len(), 3);
    for (v, row) in table.rows.iter().enumerate() {
        assert_eq!(row.support, vec![v]);
        assert!(matches!(row.source, RowSource::Dirac { .. }));
        // the species beaten by v's resident gains alpha/beta, the one beating it gamma/beta
        let mut rates: Vec<f64> = row.rates.iter().map(|r| r.mean).collect();
        rates.remove(v);
        rates.sort_by(f64::total_cmp);
        assert!((rates[0] - 0.95f64.ln()).abs() < 1e-15);
        assert!((rates[1] - 1.05f64.ln()).abs() < 1e-15);
    }
    // every vertex is invadable, yet ln 1.05 + ln 0.95 < 0 leaves no positive weights
    assert_eq!(table.verdict, PermanenceVerdict::Persistent);
    assert!(!find_persistence_weights(&table).feasible);
}

#[test]
fn ricker_competition_permanence() {
    let m = ModelSpec::RickerCompetition {
        r: [Wire::Coord(0), Wire::Coord(1)],
        alpha: [0.5, 0.6],
    };
    let env = EnvSpec::new(vec![
        ScalarDist::Normal {
            mean: 1.0,
            sd: 0.2,
        },
        ScalarDist::Normal {
            mean: 0.8,
            sd: 0.2,
        },
    ]);
    let cfg = SimConfig {
        seed: 6,
        replicates: 2,
        burn_in: 1000,
        horizon: 30_000,
        ..Default::default()
    };
    let table = boundary_invasion_report(&m, &env, &cfg, 20_000).unwrap();
    assert_eq!(table.verdict, PermanenceVerdict::Persistent);
    for row in &table.rows {
        assert!(row.stationarity_ok, "{row:?}");
    }
    let w = find_persistence_weights(&table);
    assert!(w.feasible && w.weights.iter().all(|p| *p > 0.0));
}
