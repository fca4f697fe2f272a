use proptest::prelude::*;
use smoothtail::engine::{self, ConvergenceOptions, SamplePool};
use smoothtail::model::{self, canonicalize, sample_weights, NLaw, QLaw, TLaw, WeightModel};
use smoothtail::moments::{self, MomentEvaluator, RootSearch};
use smoothtail::rng::{domain, StreamId};
use smoothtail::special::{self, MixtureSolution};
use smoothtail::tail::{self, KOptions, PairedSample};
use smoothtail::{pool_io, Estimate};

fn lognormal(mu: f64, sigma2: f64, n: u32) -> WeightModel {
    WeightModel::new(
        NLaw::Fixed { n },
        TLaw::SignedLognormal { mu, sigma2, p_neg: 0.5 },
        QLaw::Normal { mean: 0.0, sd: 1.0 },
    )
}

fn families() -> Vec<WeightModel> {
    vec![
        lognormal(-1.0, 0.5, 2),
        WeightModel::new(NLaw::Geometric { p: 0.4, max: 60 }, TLaw::Uniform { a: -0.6, b: 0.8 }, QLaw::PointMass { value: 1.0 }),
        WeightModel::new(
            NLaw::Discrete { probs: vec![0.1, 0.3, 0.6] },
            TLaw::Mixture {
                components: vec![
                    model::MixtureComponent { weight: 0.5, law: TLaw::PointMass { c: 0.3, p_neg: 0.2 } },
                    model::MixtureComponent { weight: 0.5, law: TLaw::SignedLognormal { mu: -0.5, sigma2: 0.3, p_neg: 0.5 } },
                ],
            },
            QLaw::Uniform { a: -1.0, b: 1.0 },
        ),
    ]
}

#[test]
fn closed_form_and_monte_carlo_agree() {
    for m in families() {
        let eval = MomentEvaluator::new(&m, 400_000, 11);
        for s in [0.5, 1.0, 2.0] {
            let exact = m.m_closed(s);
            let mc = eval.m_mc(s);
            assert!((mc.value - exact).abs() <= 3.0 * mc.se, "{m:?} s={s}: {} vs {exact} (se {})", mc.value, mc.se);
        }
    }
}

#[test]
fn m_is_convex_on_grid() {
    for m in families() {
        let eval = MomentEvaluator::new(&m, 100_000, 5);
        let grid: Vec<f64> = (1..40).map(|i| 0.1 * i as f64).collect();
        let v: Vec<Estimate> = grid.iter().map(|&s| eval.m(s).unwrap()).collect();
        for w in v.windows(3) {
            let d2 = w[0].value - 2.0 * w[1].value + w[2].value;
            let se = (w[0].se.powi(2) + 4.0 * w[1].se.powi(2) + w[2].se.powi(2)).sqrt();
            assert!(d2 >= -3.0 * se - 1e-12, "second difference {d2}");
        }
    }
}

#[test]
fn dominating_functionals_bound_m() {
    let m = lognormal(-1.0, 0.5, 2);
    let eval = MomentEvaluator::new(&m, 200_000, 9);
    for s in [1.0, 1.5, 2.0, 3.0] {
        let (a, b) = (eval.m(s).unwrap(), eval.mu(s).unwrap());
        assert!(a.value <= b.value + 3.0 * a.se.hypot(b.se));
    }
    for s in [0.25, 0.5, 1.0] {
        let (a, b) = (eval.m(s).unwrap(), eval.m_eps(s, 0.5).unwrap());
        assert!(a.value <= 1.0 + b.value + 3.0 * a.se.hypot(b.se));
    }
}

#[test]
fn canonical_mu_matches_expansion() {
    // E(|T1| + |T2|)^2 = 2 E|T|^2 + 2 (E|T|)^2 with E|T|^s = exp(-s + s^2/4).
    let m = lognormal(-1.0, 0.5, 2);
    let oracle = 2.0 * (-1.0f64).exp() + 2.0 * (-0.75f64).exp().powi(2);
    assert!((m.mu_closed(2.0).unwrap() - oracle).abs() < 1e-12);
    let mc = MomentEvaluator::new(&m, 1_000_000, 2).mu_mc(2.0);
    assert!((mc.value - oracle).abs() <= 3.0 * mc.se);
}

#[test]
fn canonical_slope_values() {
    let m = lognormal(-1.0, 0.5, 2);
    let eval = MomentEvaluator::new(&m, 1000, 0);
    let roots = moments::find_roots(&eval, &RootSearch::for_model(&m)).unwrap();
    let h = 1e-5;
    let fd = |s: f64| (m.m_closed(s + h) - m.m_closed(s - h)) / (2.0 * h);
    assert!((roots.m_prime_beta - fd(roots.beta)).abs() < 1e-6);
    assert!((roots.m_prime_alpha - fd(roots.alpha)).abs() < 1e-6);
    assert!((roots.m_prime_beta - 0.553943).abs() < 1e-6);
    assert!(roots.m_prime_alpha < 0.0 && roots.m_prime_beta > 0.0);
}

#[test]
fn pools_do_not_depend_on_thread_count() {
    let m = lognormal(-1.0, 0.5, 2);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let p = SamplePool::<f64>::point_mass(20_000, 0.0, 77).unwrap();
            let opts = ConvergenceOptions { tol: 0.0, max_generations: 5, min_generations: 0 };
            engine::run_to_convergence(&m, p, &opts).0
        })
    };
    let a = run(1);
    for threads in [2, 3] {
        assert_eq!(a.values, run(threads).values);
    }
}

#[test]
fn mean_is_preserved_from_r() {
    let m = WeightModel::new(NLaw::Fixed { n: 2 }, TLaw::SignedLognormal { mu: -1.0, sigma2: 0.5, p_neg: 0.0 }, QLaw::Normal { mean: 1.0, sd: 1.0 });
    let eval = MomentEvaluator::new(&m, 1000, 0);
    let r = moments::solve_mean_equation(&eval).unwrap();
    let opts = ConvergenceOptions { tol: 0.0, max_generations: 20, min_generations: 0 };
    let init = SamplePool::<f64>::point_mass(50_000, r, 3).unwrap().with_target_mean(Some(r));
    let (_, diag) = engine::run_to_convergence(&m, init, &opts);
    assert!(diag.mean_violations.len() <= 1, "violations at {:?}", diag.mean_violations);
}

#[test]
fn squared_solution_keeps_mean_one() {
    let m = WeightModel::new(NLaw::Fixed { n: 2 }, TLaw::Uniform { a: -1.224_744_871_391_589, b: 1.224_744_871_391_589 }, QLaw::PointMass { value: 0.0 });
    let m2 = Estimate::exact(m.m_closed(2.0));
    assert!((m2.value - 1.0).abs() < 1e-12);
    let opts = ConvergenceOptions { tol: 0.0, max_generations: 15, min_generations: 0 };
    let (w, diag) = special::solve_squared_W::<f64>(&m, &m2, special::DEFAULT_M2_TOL, 50_000, 4, &opts).unwrap();
    assert!(diag.mean_violations.len() <= 1);
    assert!(w.values.iter().all(|x| *x >= 0.0));
    let mix = MixtureSolution::new(0.5, 1.0, w).unwrap();
    let est = mix.w_mean();
    assert!((est.value - 1.0).abs() <= 4.0 * est.se);
    let xs = special::alpha2_sample(&mix, 100_000, 4, 0);
    assert!(special::symmetry_check(&xs, 0.5).pass);
}

#[test]
fn coupling_cancels_unit_weight() {
    let m = WeightModel::homogeneous(NLaw::Fixed { n: 1 }, TLaw::PointMass { c: 1.0, p_neg: 0.0 });
    let pool = SamplePool::<f64> { values: (1..=500).map(|i| i as f64 * 0.37).collect(), generation: 0, seed: 1, target_mean: None };
    let pairs = PairedSample::build(&m, &pool, true);
    let est = tail::KEstimator::new(&pairs, KOptions::default(), 1).unwrap();
    for s in [0.5, 1.5, 3.0] {
        assert!(est.contributions(s).iter().all(|c| *c == 0.0));
    }
}

#[test]
fn hill_is_consistent_over_seeds() {
    use rand::Rng;
    for b in [0.5, 1.0, 2.5, 5.0] {
        let mut misses = 0;
        for seed in 0..20u64 {
            let mut g = smoothtail::rng::stream(seed, StreamId::new(domain::USER, 1, 0));
            let xs: Vec<f64> = (0..100_000).map(|_| (1.0 - g.random::<f64>()).powf(-1.0 / b)).collect();
            let est = tail::hill_estimate(&xs, 1000).unwrap().value;
            misses += usize::from((est - b).abs() > 3.0 * b / 1000f64.sqrt());
        }
        assert!(misses <= 1, "b = {b}: {misses} misses");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampling_is_reproducible_and_sorted(seed in any::<u64>(), a in any::<u64>(), b in any::<u64>(), n in 0u32..6) {
        let m = lognormal(-0.3, 0.8, n);
        let id = StreamId::new(domain::USER, a, b);
        let x = sample_weights::<f64>(&m, seed, id);
        prop_assert_eq!(&x, &sample_weights::<f64>(&m, seed, id));
        prop_assert_eq!(x.n(), n as usize);
        prop_assert!(x.t.windows(2).all(|w| w[0].abs() >= w[1].abs()));
        prop_assert!(x.t.iter().all(|t| *t != 0.0));
    }

    #[test]
    fn canonicalize_is_idempotent(q in -10.0f64..10.0, raw in prop::collection::vec(prop_oneof![Just(0.0), -3.0f64..3.0], 0..12)) {
        let once = canonicalize(q, &raw);
        let twice = canonicalize(once.q, &once.t);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn two_root_models_have_small_residuals(mu in -1.5f64..-0.5, sigma2 in 0.2f64..1.0) {
        let m = lognormal(mu, sigma2, 2);
        let eval = MomentEvaluator::new(&m, 1000, 0);
        match moments::find_roots(&eval, &RootSearch::for_model(&m)) {
            Ok(r) => {
                prop_assert!(r.alpha < r.beta);
                prop_assert!((m.m_closed(r.alpha) - 1.0).abs() <= 1e-8);
                prop_assert!((m.m_closed(r.beta) - 1.0).abs() <= 1e-8);
                prop_assert!(r.m_prime_alpha < 0.0 && r.m_prime_beta > 0.0);
            }
            // ln 2 + mu s + sigma2 s^2 / 2 = 0 has no positive roots.
            Err(_) => prop_assert!(mu * mu < 2.0 * sigma2 * 2f64.ln()),
        }
    }

    #[test]
    fn pool_binary_round_trip(values in prop::collection::vec(-1e6f64..1e6, 2..200), generation in 0u64..1000, seed in any::<u64>()) {
        let pool = SamplePool { values, generation, seed, target_mean: None };
        let mut buf = Vec::new();
        pool_io::write_binary(&pool, &mut buf).unwrap();
        let back: SamplePool<f64> = pool_io::read_binary(buf.as_slice()).unwrap();
        prop_assert_eq!(back.values, pool.values);
        prop_assert_eq!((back.generation, back.seed), (generation, seed));
    }

    #[test]
    fn subadditive_bound_holds(s in 0.95f64..1.0, seed in 0u64..1000) {
        let m = lognormal(-1.0, 0.5, 2);
        let pool = SamplePool::<f64>::point_mass(5_000, 0.0, seed).unwrap();
        let opts = ConvergenceOptions { tol: 0.0, max_generations: 3, min_generations: 0 };
        let (pool, _) = engine::run_to_convergence(&m, pool, &opts);
        let b = engine::moment_bound_check(&m, &pool, s, Estimate::exact(m.m_closed(s))).unwrap();
        prop_assert!(b.pass, "{:?}", b);
    }
}

#[test]
fn f32_pools_track_f64_pools() {
    let m = lognormal(-1.0, 0.5, 2);
    let opts = ConvergenceOptions { tol: 0.0, max_generations: 10, min_generations: 0 };
    let (a, _) = engine::run_to_convergence(&m, SamplePool::<f64>::point_mass(50_000, 0.0, 8).unwrap(), &opts);
    let (b, _) = engine::run_to_convergence(&m, SamplePool::<f32>::point_mass(50_000, 0.0, 8).unwrap(), &opts);
    let (sa, sb) = (a.sd(), b.sd());
    assert!((sa - sb).abs() < 0.02 * sa, "{sa} vs {sb}");
}
