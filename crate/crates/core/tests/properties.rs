use popdyn_core::engine::{InitialState, EXTINCTION_FLOOR_LOG};
use popdyn_core::persist::coupled_dominance;
use popdyn_core::{
    lyapunov_mc, make_stream, roerdink_gamma, simulate, EnvSpec, GammaClosedFormInput, ModelSpec,
    Norm, Observables, ScalarDist, SetDescriptor, SimConfig, Wire,
};
use proptest::prelude::*;

fn lognormal(m: f64, s: f64) -> ScalarDist {
    ScalarDist::LogNormal {
        log_mean: m,
        log_sd: s,
    }
}

fn rps(d: f64) -> (ModelSpec, EnvSpec) {
    // alpha in [3, 4], beta = 2, gamma in [0.5, 1.5]: ordered on every draw
    let env = EnvSpec::new(vec![
        ScalarDist::Uniform { lo: 3.0, hi: 4.0 },
        ScalarDist::Uniform { lo: 0.5, hi: 1.5 },
    ]);
    let m = ModelSpec::RpsLottery {
        d,
        alpha: Wire::Coord(0),
        beta: Wire::Const(2.0),
        gamma: Wire::Coord(1),
    };
    (m, env)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_coordinates_stay_zero(
        x in prop::collection::vec(0.0f64..5.0, 3),
        zero in 0usize..3,
        seed in any::<u64>(),
    ) {
        let mut x = x;
        x[zero] = 0.0;
        let env = EnvSpec::new(vec![lognormal(1.0, 0.5); 3]);
        let models = vec![
            (ModelSpec::Lottery { d: 0.3, fecundity: vec![Wire::Coord(0), Wire::Coord(1), Wire::Coord(2)] }, true),
            (ModelSpec::RickerCompetition { r: [Wire::Coord(0), Wire::Coord(1)], alpha: [0.5, 0.6] }, false),
        ];
        let sampler = env.sampler().unwrap();
        let mut s = make_stream(seed, 0);
        for (m, simplex) in models {
            let mut y: Vec<f64> = if simplex {
                let t: f64 = x.iter().sum::<f64>().max(1e-9);
                let mut y: Vec<f64> = x.iter().map(|v| v / t).collect();
                if y.iter().all(|v| *v == 0.0) { y[(zero + 1) % 3] = 1.0; }
                y
            } else {
                x[..2].to_vec()
            };
            let z = zero.min(y.len() - 1);
            y[z] = 0.0;
            if simplex && y.iter().sum::<f64>() == 0.0 { y[(z + 1) % 3] = 1.0; }
            for _ in 0..50 {
                y = m.step(&y, &sampler.sample(&mut s)).unwrap();
                prop_assert_eq!(y[z], 0.0);
            }
        }
    }

    #[test]
    fn hassell_factor_strictly_decreasing(
        lambda in 0.01f64..50.0,
        b in 0.05f64..5.0,
        x in 0.0f64..1e3,
        dx in 1e-3f64..10.0,
    ) {
        let m = ModelSpec::Hassell { lambda: Wire::Const(lambda), b: Wire::Const(b) };
        let f0 = m.percapita_growth(&[x], &[], 0).unwrap();
        let f1 = m.percapita_growth(&[x + dx], &[], 0).unwrap();
        prop_assert!(f1 < f0);
    }

    #[test]
    fn biennial_entries_non_increasing(
        x in prop::collection::vec(0.0f64..10.0, 2),
        coord in 0usize..2,
        dx in 1e-3f64..5.0,
        xi in 0.0f64..10.0,
    ) {
        let m = ModelSpec::Biennial { p: 0.4, a: 0.6, b1: 0.3, b2: 0.7, xi: Wire::Coord(0) };
        let a0 = m.matrix_at(&x, &[xi]).unwrap();
        let mut x1 = x.clone();
        x1[coord] += dx;
        let a1 = m.matrix_at(&x1, &[xi]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!(a1.get(i, j) <= a0.get(i, j));
            }
        }
    }

    #[test]
    fn occupation_of_complements_sums_to_one(eta in 1e-4f64..2.0, radius in 0.1f64..5.0, seed in 0u64..1000) {
        let m = ModelSpec::Hassell { lambda: Wire::Coord(0), b: Wire::Const(1.0) };
        let env = EnvSpec::new(vec![lognormal(0.3, 0.5)]);
        let sets = vec![
            SetDescriptor::ExtinctionNeighborhood { eta },
            SetDescriptor::ExtinctionNeighborhood { eta }.complement(),
            SetDescriptor::OutsideBall { radius },
            SetDescriptor::OutsideBall { radius }.complement(),
        ];
        let obs = Observables { sets: sets.clone(), functionals: vec![] };
        let cfg = SimConfig { seed, replicates: 2, burn_in: 50, horizon: 2000, ..Default::default() };
        let r = simulate(&m, &env, &cfg, &obs).unwrap();
        for rep in r.replicates.iter() {
            for pair in [0, 2] {
                let a = rep.occupation_of(&sets[pair]).unwrap();
                let b = rep.occupation_of(&sets[pair + 1]).unwrap();
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!((a + b - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn lyapunov_estimate_ignores_initial_scale(c in 1e-3f64..1e3, e in -20i32..20) {
        let m = ModelSpec::Biennial { p: 0.3, a: 0.5, b1: 1.0, b2: 1.0, xi: Wire::Coord(0) };
        let env = EnvSpec::new(vec![ScalarDist::Gamma { shape: 1.0, scale: 2.0 }]);
        let base = SimConfig {
            seed: 4,
            replicates: 1,
            burn_in: 10,
            horizon: 2000,
            initial_state: InitialState::Vector(vec![0.3, 0.9]),
            ..Default::default()
        };
        let g = lyapunov_mc(&m, &env, &base, Norm::One).unwrap();
        let pow2 = 2f64.powi(e);
        let scaled = |k: f64| SimConfig { initial_state: InitialState::Vector(vec![0.3 * k, 0.9 * k]), ..base.clone() };
        // a power-of-two scale leaves every rounding step unchanged
        prop_assert_eq!(lyapunov_mc(&m, &env, &scaled(pow2), Norm::One).unwrap(), g);
        let gc = lyapunov_mc(&m, &env, &scaled(c), Norm::One).unwrap();
        prop_assert!((gc.mean - g.mean).abs() <= 1e-12 * g.mean.abs());
    }
}

#[test]
fn simplex_is_preserved_over_long_runs() {
    let env = EnvSpec::new(vec![lognormal(1.0, 0.8); 3]);
    let lottery = ModelSpec::Lottery {
        d: 0.5,
        fecundity: vec![Wire::Coord(0), Wire::Coord(1), Wire::Coord(2)],
    };
    let (rps_model, rps_env) = rps(0.3);
    for (m, env) in [(lottery, env), (rps_model, rps_env)] {
        let sampler = env.sampler().unwrap();
        let mut s = make_stream(17, 0);
        let mut x = vec![0.2, 0.3, 0.5];
        for t in 0..100_000 {
            x = m.step(&x, &sampler.sample(&mut s)).unwrap();
            let total: f64 = x.iter().sum();
            assert!((total - 1.0).abs() <= 1e-12, "{} left the simplex at {t}: {total}", m.name());
            assert!(x.iter().all(|v| *v >= 0.0));
        }
    }
}

#[test]
fn rps_pairwise_dominance() {
    // payoff rows put species i ahead of i+1 (mod 3) on their shared edge
    let (m, env) = rps(0.2);
    let sampler = env.sampler().unwrap();
    for (dominant, subordinate) in [(0, 1), (1, 2), (2, 0)] {
        let mut s = make_stream(23, dominant as u64);
        let mut x = vec![0.0; 3];
        x[dominant] = 0.01;
        x[subordinate] = 0.99;
        let mut ratio = x[subordinate] / x[dominant];
        for t in 0..10_000 {
            x = m.step(&x, &sampler.sample(&mut s)).unwrap();
            let next = x[subordinate] / x[dominant];
            if x[subordinate] < EXTINCTION_FLOOR_LOG.exp() {
                // numerically extinct; below here rounding, not dynamics, decides
                break;
            }
            assert!(next < ratio, "edge ({dominant},{subordinate}) ratio rose at step {t}");
            ratio = next;
        }
    }
}

#[test]
fn lyapunov_norm_independence() {
    let m = ModelSpec::Biennial {
        p: 0.5,
        a: 0.5,
        b1: 1.0,
        b2: 1.0,
        xi: Wire::Coord(0),
    };
    let env = EnvSpec::new(vec![ScalarDist::Gamma {
        shape: 1.0,
        scale: 2.0,
    }]);
    let cfg = SimConfig {
        seed: 5,
        replicates: 4,
        burn_in: 1000,
        horizon: 100_000,
        ..Default::default()
    };
    let one = lyapunov_mc(&m, &env, &cfg, Norm::One).unwrap();
    let max = lyapunov_mc(&m, &env, &cfg, Norm::Max).unwrap();
    let se = (one.std_error.powi(2) + max.std_error.powi(2)).sqrt();
    assert!((one.mean - max.mean).abs() <= 3.0 * se, "{one:?} vs {max:?}");
}

#[test]
fn deterministic_linear_matrix_matches_spectral_radius() {
    // [[1, 2], [3, 0.5]]: eigenvalues (1.5 ± sqrt(0.25 + 24)) / 2
    let m = ModelSpec::LinearMatrix {
        entries: vec![
            vec![Wire::Const(1.0), Wire::Const(2.0)],
            vec![Wire::Const(3.0), Wire::Const(0.5)],
        ],
    };
    let rho = (1.5 + (0.25f64 + 24.0).sqrt()) / 2.0;
    let cfg = SimConfig {
        replicates: 1,
        burn_in: 200,
        horizon: 2000,
        ..Default::default()
    };
    let g = lyapunov_mc(&m, &EnvSpec::default(), &cfg, Norm::One).unwrap();
    assert!((g.mean - rho.ln()).abs() < 1e-8);
}

#[test]
fn quadrature_is_self_consistent() {
    for p in [0.05, 0.3, 0.5, 0.7, 0.95] {
        for k in [0.5, 1.0, 2.5] {
            let loose = GammaClosedFormInput {
                p,
                a: 0.5,
                theta: 2.0,
                k,
                rel_tol: 1e-8,
            };
            let tight = GammaClosedFormInput {
                rel_tol: 5e-9,
                ..loose
            };
            let a = roerdink_gamma(&loose).unwrap();
            let b = roerdink_gamma(&tight).unwrap();
            assert!(
                (a.value - b.value).abs() <= a.error_bound.max(f64::EPSILON * a.value.abs()),
                "p={p} k={k}: {} vs {} (bound {})",
                a.value,
                b.value,
                a.error_bound
            );
        }
    }
}

#[test]
fn roerdink_is_continuous_at_p0() {
    let g = roerdink_gamma(&GammaClosedFormInput {
        p: 1e-6,
        a: 0.5,
        theta: 2.0,
        k: 1.0,
        rel_tol: 1e-10,
    })
    .unwrap();
    assert!((g.value - 0.5f64.ln()).abs() < 1e-4);
}

#[test]
fn hassell_dominance_holds_for_many_seeds() {
    let m = ModelSpec::Hassell {
        lambda: Wire::Coord(0),
        b: Wire::Const(1.0),
    };
    let env = EnvSpec::new(vec![lognormal(0.3, 0.5)]);
    for seed in 0..20 {
        let d = coupled_dominance(&m, &env, 4.0, 0.5 + seed as f64, 2000, seed).unwrap();
        assert_eq!(d.violations, 0, "seed {seed}");
    }
}

#[test]
fn simulation_is_reproducible_across_thread_pools() {
    let m = ModelSpec::Lottery {
        d: 0.1,
        fecundity: vec![Wire::Coord(0), Wire::Coord(1)],
    };
    let env = EnvSpec::new(vec![lognormal(1.0, 0.3); 2]);
    let cfg = SimConfig {
        seed: 8,
        replicates: 8,
        burn_in: 100,
        horizon: 2000,
        ..Default::default()
    };
    let obs = Observables::standard(&m, &cfg);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate(&m, &env, &cfg, &obs).unwrap())
    };
    let a = run(1);
    assert_eq!(a, run(4));
    assert_eq!(a, run(3));
}
