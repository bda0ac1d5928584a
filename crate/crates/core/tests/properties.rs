//! Cross-module properties: Duncan identities, route equivalence, Riccati
//! fixed points and aggregation determinism.

use std::sync::Arc;

use infolim::estimators::GridConfig;
use infolim::experiments::systems::{diagonal_poles, scalar_loop};
use infolim::experiments::ExperimentConfig;
use infolim::inforate::{
    control_rate_monte_carlo, control_rate_riccati, filtering_rate, nonlinear_filtering_rate, NonlinearFilter, Verdict,
};
use infolim::riccati::solve_are;
use infolim::sde::{InitialState, SeedSpec, TimeGrid};
use infolim::statespace::{ChannelMap, LtiSystem, LtvSystem, NonlinearScalarSystem};
use infolim::{Mat, Vector};
use proptest::prelude::*;

fn expensive() -> ProptestConfig {
    ProptestConfig { cases: 6, ..ProptestConfig::default() }
}

fn pole_list() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![-3.0..-0.3f64, 0.3..3.0f64], 1..4)
}

proptest! {
    #[test]
    fn riccati_rate_is_the_unstable_pole_sum(poles in pole_list()) {
        let plant = diagonal_poles(&poles).unwrap();
        let grid = TimeGrid::new(40.0, 1e-3).unwrap();
        let r = control_rate_riccati(&plant.sys, &grid, &plant.x0.cov).unwrap();
        let expected: f64 = poles.iter().filter(|p| **p > 0.0).sum();
        prop_assert!((r.report.rate - expected).abs() < 1e-4, "{} vs {expected}", r.report.rate);
        prop_assert!(r.identity_residual < 1e-6);
    }

    #[test]
    fn are_solution_is_a_fixed_point(poles in pole_list(), w in 0.01..2.0f64) {
        let n = poles.len();
        let sys = LtiSystem::new(Mat::from_diagonal(&Vector::from_vec(poles)), Mat::identity(n, n), Mat::identity(n, n), None).unwrap();
        let are = solve_are(&sys, &Mat::from_diagonal_element(n, n, w), &Mat::identity(n, n)).unwrap();
        let p = &are.p;
        let res = (&sys.a * p + p * sys.a.transpose() + Mat::from_diagonal_element(n, n, w) - p * p).norm();
        prop_assert!(res < 1e-8 * (1.0 + p.norm()), "residual {res}");
        prop_assert!((p - p.transpose()).norm() == 0.0);
    }

    #[test]
    fn filtering_rate_decreases_toward_the_pole_sum(poles in pole_list()) {
        let n = poles.len();
        let expected: f64 = poles.iter().filter(|p| **p > 0.0).sum();
        let sys = LtvSystem::from(
            &LtiSystem::new(Mat::from_diagonal(&Vector::from_vec(poles)), Mat::identity(n, n), Mat::identity(n, n), None).unwrap(),
        );
        let grid = TimeGrid::new(30.0, 1e-3).unwrap();
        let eps = [1e-1, 1e-2, 1e-3];
        let sweep = filtering_rate(&sys, &grid, &eps, &InitialState::standard(n), 0, &SeedSpec::new(1)).unwrap();
        let rates: Vec<f64> = sweep.deterministic.iter().map(|r| r.rate).collect();
        for w in rates.windows(2) {
            prop_assert!(w[0] >= w[1] - 1e-10 * w[0].abs(), "{rates:?}");
        }
        prop_assert!(rates[2] >= expected - 1e-10, "{rates:?} vs {expected}");
        prop_assert!((sweep.limit.report.rate - expected).abs() < 1e-4);
    }

    #[test]
    fn verdict_passes_iff_slack_is_nonnegative(lhs in -10.0..10.0f64, rhs in -10.0..10.0f64, tol in 0.0..5.0f64) {
        let ge = Verdict::at_least("ge", lhs, rhs, tol, "t");
        prop_assert_eq!(ge.passed(), lhs >= rhs - tol);
        prop_assert_eq!(ge.passed(), ge.slack() >= 0.0);
        let le = Verdict::at_most("le", lhs, rhs, tol, "t");
        prop_assert_eq!(le.passed(), lhs <= rhs + tol);
        let eq = Verdict::equal("eq", lhs, rhs, tol, "t");
        prop_assert_eq!(eq.passed(), (lhs - rhs).abs() <= tol);
    }

    #[test]
    fn config_survives_a_json_round_trip(alpha in -2.0..2.0f64, seed in any::<u64>(), n in 2usize..5000) {
        let mut cfg = ExperimentConfig::new("appendix_a");
        cfg.alpha = Some(alpha);
        cfg.mc = Some(infolim::experiments::McSpec { n_paths: Some(n), master_seed: Some(seed) });
        let text = serde_json::to_string(&cfg).unwrap();
        prop_assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(expensive())]

    #[test]
    fn duncan_identities_hold_on_scalar_loops(alpha in 0.3..1.5f64, margin in 0.5..2.0f64, seed in any::<u64>()) {
        let plant = scalar_loop(alpha, alpha + margin, 1.0).unwrap();
        let grid = TimeGrid::new(6.0, 2e-3).unwrap();
        let mc = control_rate_monte_carlo(&plant.sys, &grid, &plant.x0, 200, &SeedSpec::new(seed)).unwrap();
        for v in mc.identity_verdicts("") {
            prop_assert!(v.passed(), "{v}");
        }
        let ric = control_rate_riccati(&plant.sys, &grid, &plant.x0.cov).unwrap();
        let se = mc.report.mc_std_error.unwrap();
        prop_assert!((mc.report.rate - ric.report.rate).abs() <= 4.0 * se, "{} vs {} ± {se}", mc.report.rate, ric.report.rate);
    }

    #[test]
    fn aggregation_ignores_worker_count(seed in any::<u64>()) {
        let plant = scalar_loop(1.0, 2.0, 1.0).unwrap();
        let grid = TimeGrid::new(2.0, 1e-2).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                control_rate_monte_carlo(&plant.sys, &grid, &plant.x0, 150, &SeedSpec::new(seed)).unwrap()
            })
        };
        let (a, b) = (run(1), run(3));
        prop_assert_eq!(a.report.rate.to_bits(), b.report.rate.to_bits());
        prop_assert_eq!(a.difference_form.mean.to_bits(), b.difference_form.mean.to_bits());
        prop_assert_eq!(a.profiles_csv("u", 10), b.profiles_csv("u", 10));
    }

    #[test]
    fn constant_observation_carries_no_information(c in -3.0..3.0f64, seed in any::<u64>()) {
        let sys = NonlinearScalarSystem {
            f: Arc::new(|_, x| -x),
            b: Arc::new(|_, _| 1.0),
            channel: ChannelMap::Observation(Arc::new(move |_, _| c)),
            noise_scale: 1.0,
            x0_mean: 0.0,
            x0_std: 1.0,
            truncation: (-10.0, 10.0),
            autonomous: true,
        };
        let grid = TimeGrid::new(1.0, 1e-2).unwrap();
        let filter = NonlinearFilter::Grid(GridConfig { n_cells: 128, ..GridConfig::default() });
        let r = nonlinear_filtering_rate(&sys, &grid, 4, &SeedSpec::new(seed), &filter).unwrap();
        prop_assert!(r.mc.report.rate.abs() < 1e-12, "{}", r.mc.report.rate);
        prop_assert!(r.mc.difference_form.mean.abs() < 1e-10);
    }
}
