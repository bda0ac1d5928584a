//! Scalar nonlinear channels: Duncan forms, and filter accuracy against
//! Kalman–Bucy on a linear-Gaussian instance.

use std::sync::Arc;

use super::systems::{self, Plant};
use super::{stride_for, Run};
use crate::error::Result;
use crate::estimators::kushner::CLIP_TOL;
use crate::estimators::{
    filter_covariance, kalman_bucy_run, kushner_grid_run, particle_filter_run, GridConfig, KalmanModel,
    ParticleConfig,
};
use crate::inforate::{nonlinear_control_rate, nonlinear_filtering_rate, NonlinearFilter, NonlinearRate, Verdict, SIGMA_MULTIPLIER};
use crate::linalg::{Mat, Vector};
use crate::sde::{simulate_nonlinear, SeedSpec, SimOptions, TimeGrid};
use crate::statespace::{ChannelMap, LtiSystem, LtvSystem, NonlinearScalarSystem};

/// Grid-filter domain used by the nonlinear experiments.
const FILTER_SUPPORT: (f64, f64) = (-6.0, 6.0);
/// Relative tolerance of the grid filter against Kalman–Bucy.
const GRID_FILTER_TOL: f64 = 0.02;
/// Bound on the RMS gap of the particle filter in its own standard errors.
const PARTICLE_RMS_BOUND: f64 = 3.0;

fn grid_filter() -> NonlinearFilter {
    NonlinearFilter::Grid(GridConfig { support: Some(FILTER_SUPPORT), ..GridConfig::default() })
}

/// `f′(0)` by central difference.
fn linearized_pole(sys: &NonlinearScalarSystem) -> f64 {
    let h = 1e-6;
    ((sys.f)(0.0, h) - (sys.f)(0.0, -h)) / (2.0 * h)
}

fn record(run: &mut Run, r: &NonlinearRate, signal: &str, grid: &TimeGrid) {
    run.checks("", r.mc.identity_verdicts(""));
    run.check(r.mean_square_stability());
    if let Some(c) = r.max_clipped_mass {
        run.check(Verdict::at_most("grid_filter.max_clipped_mass", c, 0.0, CLIP_TOL, "clip tolerance"));
    }
    run.quantities(r.mc.quantities("monte_carlo"));
    run.quantity("boundary_paths", r.boundary_paths as f64);
    run.quantity("second_moment_mid", r.second_moment_mid);
    run.quantity("second_moment_late", r.second_moment_late);
    if r.boundary_paths > 0 {
        run.note(format!("{} paths reached the edge of the filter domain", r.boundary_paths));
    }
    run.series("monte_carlo_profiles", r.mc.profiles_csv(signal, stride_for(grid, 2000)));
}

pub(crate) fn lti_lemma37_nonlinear_k(run: &mut Run) -> Result<()> {
    let alpha = run.cfg.alpha.unwrap_or(0.5);
    let sys = run
        .plant(|| systems::saturated_loop(alpha, 0.0, 1.0, 2.0, 1.0, 0.5).map(Plant::Nonlinear))?
        .nonlinear("lti_lemma37_nonlinear_k")?;
    let grid = run.grid((10.0, 1e-3))?;
    let r = nonlinear_control_rate(&sys, &grid, run.n_paths(100), &run.seed(), &grid_filter())?;
    let pole = linearized_pole(&sys).max(0.0);
    let se = r.mc.report.mc_std_error.unwrap_or(0.0);
    run.check(Verdict::at_least("rate_ge_unstable_pole", r.mc.report.rate, pole, SIGMA_MULTIPLIER * se, "4σ"));
    run.quantity("unstable_pole", pole);
    record(run, &r, "u", &grid);
    Ok(())
}

pub(crate) fn nl_prop314(run: &mut Run) -> Result<()> {
    let sys = run
        .plant(|| systems::saturated_loop(0.5, 0.1, 1.0, 2.0, 1.0, 0.5).map(Plant::Nonlinear))?
        .nonlinear("nl_prop314")?;
    let grid = run.grid((10.0, 1e-3))?;
    let r = nonlinear_control_rate(&sys, &grid, run.n_paths(100), &run.seed(), &grid_filter())?;
    record(run, &r, "u", &grid);
    Ok(())
}

/// `dx = −0.5x dt + dw`, `dy = x dt + dv`, with `x₀ ~ N(0.3, 1)`.
fn linear_gaussian_instance() -> NonlinearScalarSystem {
    NonlinearScalarSystem {
        f: Arc::new(|_, x| -0.5 * x),
        b: Arc::new(|_, _| 1.0),
        channel: ChannelMap::Observation(Arc::new(|_, x| x)),
        noise_scale: 1.0,
        x0_mean: 0.3,
        x0_std: 1.0,
        truncation: (-10.0, 10.0),
        autonomous: true,
    }
}

/// Grid and particle filters on one path of the linear-Gaussian instance,
/// scored against the exact Kalman–Bucy filter.
fn filters_vs_kalman_bucy(run: &mut Run, seed: &SeedSpec) -> Result<()> {
    let sys = linear_gaussian_instance();
    let grid = TimeGrid::new(5.0, 1e-3)?;
    let path = simulate_nonlinear(&sys, &grid, seed, 0, &SimOptions::default())?;
    let m = |v: f64| Mat::from_element(1, 1, v);
    let lin = LtvSystem::from(&LtiSystem::new(m(-0.5), m(1.0), m(1.0), None)?);
    let cov = filter_covariance(&lin, KalmanModel::Observation { epsilon: 1.0 }, &grid, &m(1.0))?;
    let kb = kalman_bucy_run(&lin, &path, &cov, &Vector::from_element(1, sys.x0_mean))?;

    let gf = kushner_grid_run(&sys, &path, &GridConfig::default())?;
    let pf = particle_filter_run(&sys, &path, &ParticleConfig::new(10_000, seed.master_seed))?;

    let n = grid.n_steps + 1;
    let (mut dm, mut sd, mut dv, mut z2) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..n {
        let p = cov.rde.p[k][(0, 0)];
        let xhat = kb.xhat[(0, k)];
        dm += (gf.moments.mean[k] - xhat).abs();
        sd += p.sqrt();
        dv += (gf.moments.variance[k] - p).abs() / p;
        z2 += ((pf.moments.mean[k] - xhat) / pf.se_mean[k]).powi(2);
    }
    let p = "kalman_bucy";
    run.check(Verdict::at_most(format!("{p}.grid_filter_mean_gap"), dm / sd, 0.0, GRID_FILTER_TOL, "2% of mean sd"));
    run.check(Verdict::at_most(format!("{p}.grid_filter_variance_gap"), dv / n as f64, 0.0, GRID_FILTER_TOL, "2% rel"));
    run.check(Verdict::at_most(
        format!("{p}.particle_filter_rms_standardized_gap"),
        (z2 / n as f64).sqrt(),
        0.0,
        PARTICLE_RMS_BOUND,
        "3 se",
    ));
    run.quantity(format!("{p}.grid_filter_max_clipped_mass"), gf.max_clipped_mass);
    run.quantity(format!("{p}.particle_filter_resamples"), pf.resample_count as f64);
    Ok(())
}

pub(crate) fn nl_prop49(run: &mut Run) -> Result<()> {
    let sys = run
        .plant(|| systems::cubic_sensor(1.0, 1.0, 1.0, 1.0).map(Plant::Nonlinear))?
        .nonlinear("nl_prop49")?;
    let grid = run.grid((10.0, 1e-3))?;
    let seed = run.seed();
    let r = nonlinear_filtering_rate(&sys, &grid, run.n_paths(100), &seed, &grid_filter())?;
    record(run, &r, "z", &grid);
    filters_vs_kalman_bucy(run, &seed)
}
