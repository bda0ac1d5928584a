//! Feedback experiments on linear plants, and the Bode integral.

use std::f64::consts::PI;
use std::fmt::Write as _;

use super::systems::{self, LinearPlant, Plant};
use super::{stride_for, Run};
use crate::error::{Error, Result};
use crate::inforate::{
    control_rate_monte_carlo, control_rate_riccati, ltv_bode_integral, ltv_rate_bounds_check, DuncanMc, Verdict,
    SIGMA_MULTIPLIER,
};
use crate::linalg::Mat;
use crate::riccati::{integrate_rde, trace_identity_check, RdeSolution};
use crate::sde::TimeGrid;
use crate::statespace::{antistable_trace_integral, unstable_pole_sum};

/// Deterministic grids for periodic plants span this many periods.
const DETERMINISTIC_PERIODS: f64 = 10.0;

fn m1(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

/// `p(t)` of `ṗ = −p² + 2αp`.
fn scalar_covariance(alpha: f64, p0: f64, t: f64) -> f64 {
    if alpha.abs() < 1e-12 {
        p0 / (1.0 + p0 * t)
    } else if alpha > 0.0 {
        2.0 * alpha * p0 / (p0 - (p0 - 2.0 * alpha) * (-2.0 * alpha * t).exp())
    } else {
        let e = (2.0 * alpha * t).exp();
        2.0 * alpha * p0 * e / (p0 * e - p0 + 2.0 * alpha)
    }
}

/// `½∫₀ᵗ p`, in closed form.
fn scalar_total_information(alpha: f64, p0: f64, t: f64) -> f64 {
    if alpha.abs() < 1e-12 {
        0.5 * (1.0 + p0 * t).ln()
    } else if alpha > 0.0 {
        // ½ log((p0 e^{2αt} − p0 + 2α)/(2α)), kept finite for large αt
        alpha * t + 0.5 * ((p0 - (p0 - 2.0 * alpha) * (-2.0 * alpha * t).exp()) / (2.0 * alpha)).ln()
    } else {
        0.5 * ((p0 * (2.0 * alpha * t).exp() - p0 + 2.0 * alpha) / (2.0 * alpha)).ln()
    }
}

/// Trace and smallest eigenvalue of a Riccati solution, every `stride` steps.
pub(crate) fn rde_csv(rde: &RdeSolution, stride: usize) -> String {
    let mut out = String::from("t,trace,min_eig\n");
    let last = rde.p.len() - 1;
    for (k, p) in rde.p.iter().enumerate() {
        if k % stride.max(1) == 0 || k == last {
            writeln!(out, "{:.12e},{:.12e},{:.12e}", rde.grid.time(k), p.trace(), rde.min_eig[k]).unwrap();
        }
    }
    out
}

pub(crate) fn route_equivalence(name: &str, mc: &DuncanMc, deterministic: f64) -> Verdict {
    let se = mc.report.mc_std_error.unwrap_or(0.0);
    Verdict::equal(name, mc.report.rate, deterministic, SIGMA_MULTIPLIER * se, "4σ")
}

/// Grid spanning whole periods for periodic plants, `fallback` otherwise.
pub(crate) fn deterministic_grid(plant: &LinearPlant, fallback: f64, dt: f64) -> Result<TimeGrid> {
    let h = plant.sys.period().map_or(fallback, |p| DETERMINISTIC_PERIODS * p);
    TimeGrid::new(h, dt)
}

pub(crate) fn appendix_a(run: &mut Run) -> Result<()> {
    let alpha = run.cfg.alpha.unwrap_or(1.0);
    let k = run.cfg.k.unwrap_or(2.0);
    let p0 = 1.0;
    let expected = alpha.max(0.0);
    let plant = systems::scalar_loop(alpha, k, p0)?;
    run.quantity("alpha", alpha);
    run.quantity("k", k);

    // error covariance p = k²P against its closed form
    let fine = TimeGrid::new(20.0, 1e-4)?;
    let rde = integrate_rde(&|_| m1(alpha), &|_| m1(k), &|_| m1(0.0), &m1(p0 / (k * k)), &fine)?;
    let mut worst = 0.0_f64;
    let mut csv = String::from("t,p,p_closed_form\n");
    for (i, p) in rde.p.iter().enumerate() {
        let t = fine.time(i);
        let (num, exact) = (k * k * p[(0, 0)], scalar_covariance(alpha, p0, t));
        worst = worst.max((num - exact).abs());
        if i % 100 == 0 {
            writeln!(csv, "{t:.12e},{num:.12e},{exact:.12e}").unwrap();
        }
    }
    run.check(Verdict::at_most("covariance_closed_form_max_error", worst, 0.0, 1e-6, "1e-6"));
    run.series("error_covariance", csv);

    let grid50 = TimeGrid::new(50.0, 1e-3)?;
    let ric = control_rate_riccati(&plant.sys, &grid50, &plant.x0.cov)?;
    run.check(Verdict::equal("riccati.rate_eq_unstable_pole", ric.report.rate, expected, 1e-4, "1e-4"));
    let total = scalar_total_information(alpha, p0, grid50.end());
    run.check(Verdict::equal(
        "riccati.total_information_closed_form",
        ric.report.total_information,
        total,
        1e-5 * (1.0 + total.abs()),
        "1e-5 rel",
    ));
    run.check(Verdict::at_most("riccati.log_det_identity_residual", ric.identity_residual, 0.0, 1e-6, "1e-6"));
    run.quantities(ric.report.quantities("riccati"));

    let grid = run.grid((50.0, 1e-3))?;
    let n_paths = run.n_paths(1000);
    let seed = run.seed();
    let mc = control_rate_monte_carlo(&plant.sys, &grid, &plant.x0, n_paths, &seed)?;
    let ric_mc = control_rate_riccati(&plant.sys, &grid, &plant.x0.cov)?;
    if expected > 0.0 {
        run.check(Verdict::relative("monte_carlo.rate_vs_unstable_pole", mc.report.rate, expected, 0.05));
    } else {
        run.check(zero_rate("monte_carlo.difference_form_zero", &mc));
    }
    run.check(route_equivalence("monte_carlo.rate_eq_riccati", &mc, ric_mc.report.rate));
    run.checks("monte_carlo", mc.identity_verdicts(""));
    run.quantities(mc.quantities("monte_carlo"));
    run.series("monte_carlo_profiles", mc.profiles_csv("u", stride_for(&grid, 2000)));

    if alpha > 0.0 {
        // the stable companion α = −1 with the same gain
        let stable = systems::scalar_loop(-1.0, k, p0)?;
        let mc_s = control_rate_monte_carlo(&stable.sys, &grid, &stable.x0, n_paths, &seed)?;
        let ric_s = control_rate_riccati(&stable.sys, &grid50, &stable.x0.cov)?;
        run.check(Verdict::equal("stable.riccati_rate_zero", ric_s.report.rate, 0.0, 1e-12, "exact"));
        run.check(zero_rate("stable.monte_carlo_difference_form_zero", &mc_s));
        run.checks("stable.monte_carlo", mc_s.identity_verdicts(""));
        run.quantities(mc_s.quantities("stable.monte_carlo"));
    }
    Ok(())
}

/// `½(E u² − E û²) = 0` within 2σ. The error form is a mean of squares, so
/// on a stable plant it is positive with a vanishing standard error and
/// cannot be tested against zero this way.
fn zero_rate(name: &str, mc: &DuncanMc) -> Verdict {
    let d = mc.difference_form;
    Verdict::equal(name, d.mean, 0.0, 2.0 * d.std_error, "2σ")
}

pub(crate) fn lti_prop36(run: &mut Run) -> Result<()> {
    let plants: Vec<(String, LinearPlant)> = if let Some(poles) = &run.cfg.poles {
        if run.cfg.system.is_some() {
            return Err(Error::Config("give either `poles` or `system`, not both".into()));
        }
        vec![("poles".into(), systems::diagonal_poles(poles)?)]
    } else if run.cfg.system.is_some() {
        vec![("system".into(), run.plant(|| unreachable!())?.linear("lti_prop36")?)]
    } else {
        systems::prop36_systems()?
    };
    let grid50 = TimeGrid::new(50.0, 1e-3)?;
    let grid = run.grid((20.0, 1e-3))?;
    let n_paths = run.n_paths(1000);
    let seed = run.seed();
    for (label, plant) in &plants {
        if !plant.sys.is_constant() {
            return Err(Error::Config("lti_prop36 needs a time-invariant plant".into()));
        }
        let oracle = unstable_pole_sum(&plant.sys.at(0.0))?.unstable_sum;
        run.quantity(format!("{label}.unstable_pole_sum"), oracle);
        let ric = control_rate_riccati(&plant.sys, &grid50, &plant.x0.cov)?;
        run.check(Verdict::equal(format!("{label}.riccati.rate_eq_pole_sum"), ric.report.rate, oracle, 1e-4, "1e-4"));
        run.quantities(ric.report.quantities(&format!("{label}.riccati")));
        let mc = control_rate_monte_carlo(&plant.sys, &grid, &plant.x0, n_paths, &seed)?;
        let ric_mc = control_rate_riccati(&plant.sys, &grid, &plant.x0.cov)?;
        run.check(route_equivalence(&format!("{label}.monte_carlo.rate_eq_riccati"), &mc, ric_mc.report.rate));
        run.checks(&format!("{label}.monte_carlo"), mc.identity_verdicts(""));
        run.quantities(mc.quantities(&format!("{label}.monte_carlo")));
        run.series(format!("{label}_profiles"), mc.profiles_csv("u", stride_for(&grid, 2000)));
    }
    Ok(())
}

fn periodic_plant(run: &Run, default: fn() -> Result<LinearPlant>, name: &str) -> Result<LinearPlant> {
    let plant = run.plant(|| default().map(Plant::Linear))?.linear(name)?;
    if !plant.sys.has_controller() {
        return Err(Error::Config(format!("{name} needs a feedback gain `k`")));
    }
    Ok(plant)
}

pub(crate) fn ltv_prop311(run: &mut Run) -> Result<()> {
    let plant = periodic_plant(run, systems::three_state_periodic_loop, "ltv_prop311")?;
    let sys = &plant.sys;
    let det = deterministic_grid(&plant, 50.0, 1e-3)?;
    let ric = control_rate_riccati(sys, &det, &plant.x0.cov)?;
    let (modal, _) = crate::inforate::modal_form(sys)?;
    let exact_trace = antistable_trace_integral(&modal, det.end())?;
    run.check(Verdict::at_most("riccati.log_det_identity_residual", ric.identity_residual, 0.0, 1e-6, "1e-6"));
    if let Some(rde) = &ric.rde {
        let a_u = |t: f64| modal.a_u(t).expect("modal");
        let k_u = |t: f64| modal.k_u(t).expect("modal").expect("controller");
        let tic = trace_identity_check(&a_u, &k_u, rde);
        run.check(Verdict::at_most("riccati.pointwise_trace_identity", tic.max_relative_residual, 0.0, 1e-6, "1e-6"));
        run.quantity("riccati.trace_identity_skipped_steps", tic.skipped_steps as f64);
        run.series("antistable_covariance", rde_csv(rde, stride_for(&det, 2000)));
    }
    if sys.period().is_some() {
        // P_u is periodic in steady state, so ½⟨tr ṖP⁻¹⟩ vanishes over whole periods
        run.check(Verdict::equal("riccati.rate_eq_mean_trace", ric.report.rate, exact_trace, 1e-4, "1e-4"));
    }
    run.quantity("mean_trace_a_u", exact_trace);
    run.quantity("riccati.trace_average", ric.trace_average);
    run.quantity("riccati.log_det_average", ric.log_det_average);
    run.quantities(ric.report.quantities("riccati"));

    let grid = run.grid((8.0 * PI, 2e-3))?;
    let mc = control_rate_monte_carlo(sys, &grid, &plant.x0, run.n_paths(200), &run.seed())?;
    let ric_mc = control_rate_riccati(sys, &grid, &plant.x0.cov)?;
    run.check(route_equivalence("monte_carlo.rate_eq_riccati", &mc, ric_mc.report.rate));
    run.checks("monte_carlo", mc.identity_verdicts(""));
    run.quantities(mc.quantities("monte_carlo"));
    run.series("monte_carlo_profiles", mc.profiles_csv("u", stride_for(&grid, 2000)));
    Ok(())
}

pub(crate) fn ltv_cor312(run: &mut Run) -> Result<()> {
    let plant = periodic_plant(run, || systems::periodic_loop(1.5, 1.0, 1.0, -1.0, 1.0), "ltv_cor312")?;
    let sys = &plant.sys;
    let det = deterministic_grid(&plant, 50.0, 1e-3)?;
    let seed = run.seed();
    let bounds = ltv_rate_bounds_check(sys, &det, &plant.x0, 0, &seed)?;
    run.checks("riccati", bounds.verdicts.clone());
    run.quantities(bounds.quantities("bounds"));
    if let Some(rde) = &bounds.riccati.rde {
        run.series("antistable_covariance", rde_csv(rde, stride_for(&det, 2000)));
    }

    let grid = run.grid((8.0 * PI, 2e-3))?;
    let mc = control_rate_monte_carlo(sys, &grid, &plant.x0, run.n_paths(200), &seed)?;
    let ric_mc = control_rate_riccati(sys, &grid, &plant.x0.cov)?;
    let se = mc.report.mc_std_error.unwrap_or(0.0);
    run.check(Verdict::at_least(
        "monte_carlo.conditional_rate_ge_rate",
        mc.report.rate,
        ric_mc.report.rate,
        SIGMA_MULTIPLIER * se,
        "4σ",
    ));
    run.check(route_equivalence("monte_carlo.rate_eq_riccati", &mc, ric_mc.report.rate));
    run.checks("monte_carlo", mc.identity_verdicts(""));
    run.quantities(mc.quantities("monte_carlo"));
    Ok(())
}

pub(crate) fn bode_lemma310(run: &mut Run) -> Result<()> {
    let tol = 1e-3;
    let cases: Vec<(String, LinearPlant)> = match &run.cfg.system {
        Some(_) => vec![("system".into(), run.plant(|| unreachable!())?.linear("bode_lemma310")?)],
        None => vec![
            ("lti".into(), systems::bode_pair(-3.0, 1.0, 0.0, 1.0, 2.0)?),
            ("ltv".into(), systems::bode_pair(-3.0, 1.5, 1.0, 1.0, 2.0)?),
        ],
    };
    for (label, plant) in &cases {
        let grid = match run.cfg.grid {
            Some(g) => TimeGrid::new(g.horizon, g.dt)?,
            None => deterministic_grid(plant, 20.0, 1e-3)?,
        };
        let r = ltv_bode_integral(&plant.sys, &grid)?;
        if plant.sys.is_constant() {
            let oracle = unstable_pole_sum(&plant.sys.at(0.0))?.unstable_sum;
            run.check(Verdict::equal(format!("{label}.trace_route_eq_pole_sum"), r.trace_route, oracle, tol, "1e-3"));
            run.check(Verdict::equal(format!("{label}.kernel_route_eq_pole_sum"), r.kernel_route, oracle, tol, "1e-3"));
        } else if let Some(p) = plant.sys.period() {
            // whole periods: the trace average equals the mean of tr A_u over one period
            let (modal, _) = crate::inforate::modal_form(&plant.sys)?;
            let one_period = antistable_trace_integral(&modal, p)?;
            run.check(Verdict::equal(format!("{label}.trace_route_eq_period_mean"), r.trace_route, one_period, tol, "1e-3"));
        }
        run.checks(label, r.verdicts(tol));
        run.quantities(r.quantities(label));
        if !r.closed_loop_stable {
            run.note(format!("{label}: A − BC is not stable (abscissa {:.4})", r.closed_loop_abscissa));
        }
    }
    Ok(())
}
