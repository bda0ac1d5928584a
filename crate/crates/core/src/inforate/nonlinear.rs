//! Scalar nonlinear channels, with `û = π_t(u)` from a grid or particle filter.

use super::montecarlo::{run_duncan, DuncanMc, PathIntegrands};
use super::{AveragingWindow, RateRoute, Verdict};
use crate::error::{Error, Result};
use crate::estimators::{kushner_grid_run, particle_filter_run, GridConfig, ParticleConfig};
use crate::sde::{simulate_nonlinear, SeedSpec, SimOptions, TimeGrid};
use crate::statespace::NonlinearScalarSystem;

use std::sync::Mutex;

#[derive(Debug, Clone, PartialEq)]
pub enum NonlinearFilter {
    Grid(GridConfig),
    Particle { n_particles: usize, resample_fraction: f64 },
}

impl NonlinearFilter {
    fn route(&self) -> RateRoute {
        match self {
            NonlinearFilter::Grid(_) => RateRoute::Kushner,
            NonlinearFilter::Particle { .. } => RateRoute::Particle,
        }
    }
}

impl Default for NonlinearFilter {
    fn default() -> Self {
        NonlinearFilter::Grid(GridConfig::default())
    }
}

/// Duncan estimates plus filter health over the ensemble.
#[derive(Debug, Clone)]
pub struct NonlinearRate {
    pub mc: DuncanMc,
    /// Largest clipped negative mass over all grid-filter steps.
    pub max_clipped_mass: Option<f64>,
    /// Paths on which the grid density reached the domain edge.
    pub boundary_paths: usize,
    /// Smallest effective sample size seen by the particle filter.
    pub min_ess: Option<f64>,
    pub resample_count: usize,
    /// `E x²` averaged over `[H/2, 3H/4]` and `[3H/4, H]`.
    pub second_moment_mid: f64,
    pub second_moment_late: f64,
}

impl NonlinearRate {
    /// Bounded second moment: the late average may not exceed twice the mid one.
    pub fn mean_square_stability(&self) -> Verdict {
        Verdict::at_most("mean_square_bounded", self.second_moment_late, 2.0 * self.second_moment_mid, 0.0, "2x mid-horizon")
    }
}

#[derive(Default)]
struct Health {
    max_clipped: f64,
    boundary: usize,
    min_ess: f64,
    resamples: usize,
}

/// Monte Carlo rate of a scalar nonlinear channel in either mode.
pub fn nonlinear_rate(
    sys: &NonlinearScalarSystem,
    grid: &TimeGrid,
    n_paths: usize,
    seed: &SeedSpec,
    filter: &NonlinearFilter,
) -> Result<NonlinearRate> {
    sys.lipschitz_surrogate(grid.end(), 257)?;
    let window = AveragingWindow::trailing(grid, None);
    let opts = SimOptions::default();
    let health = Mutex::new(Health { min_ess: f64::INFINITY, ..Default::default() });
    let particle_cfg = match filter {
        NonlinearFilter::Particle { n_particles, resample_fraction } => Some(ParticleConfig {
            n_particles: *n_particles,
            resample_fraction: *resample_fraction,
            seed: seed.clone(),
        }),
        NonlinearFilter::Grid(_) => None,
    };
    let mc = run_duncan(filter.route(), grid, &window, n_paths, |i| {
        let path = simulate_nonlinear(sys, grid, seed, i, &opts)?;
        let moments = match filter {
            NonlinearFilter::Grid(cfg) => {
                let run = kushner_grid_run(sys, &path, cfg)?;
                let mut h = health.lock().expect("health lock");
                h.max_clipped = h.max_clipped.max(run.max_clipped_mass);
                h.boundary += run.boundary_flag as usize;
                run.moments
            }
            NonlinearFilter::Particle { .. } => {
                let run = particle_filter_run(sys, &path, particle_cfg.as_ref().expect("particle config"))?;
                let mut h = health.lock().expect("health lock");
                h.min_ess = run.ess.iter().copied().fold(h.min_ess, f64::min);
                h.resamples += run.resample_count;
                run.moments
            }
        };
        let n = grid.n_steps + 1;
        let mut p = PathIntegrands {
            signal: Vec::with_capacity(n),
            estimate: Vec::with_capacity(n),
            error: Vec::with_capacity(n),
            conditional_variance: Some(Vec::with_capacity(n)),
            state_sq: Vec::with_capacity(n),
        };
        let cv = p.conditional_variance.as_mut().expect("set above");
        for k in 0..n {
            let x = path.states[(0, k)];
            let u = sys.channel_value(grid.time(k), x);
            let uh = moments.g[k];
            p.signal.push(u * u);
            p.estimate.push(uh * uh);
            p.error.push((u - uh) * (u - uh));
            cv.push(moments.g_variance(k));
            p.state_sq.push(x * x);
        }
        Ok(p)
    })?;
    let h = health.into_inner().expect("health lock");
    let n = grid.n_steps;
    let mid = AveragingWindow::from_indices(grid, n / 2, 3 * n / 4);
    let late = AveragingWindow::from_indices(grid, 3 * n / 4, n);
    let is_grid = matches!(filter, NonlinearFilter::Grid(_));
    Ok(NonlinearRate {
        second_moment_mid: mid.trapezoid_mean(&mc.profiles.state_sq),
        second_moment_late: late.trapezoid_mean(&mc.profiles.state_sq),
        mc,
        max_clipped_mass: is_grid.then_some(h.max_clipped),
        boundary_paths: h.boundary,
        min_ess: (!is_grid).then_some(h.min_ess),
        resample_count: h.resamples,
    })
}

/// Feedback channel `de = u(t, x) dt + dw`.
pub fn nonlinear_control_rate(
    sys: &NonlinearScalarSystem,
    grid: &TimeGrid,
    n_paths: usize,
    seed: &SeedSpec,
    filter: &NonlinearFilter,
) -> Result<NonlinearRate> {
    if !sys.is_control() {
        return Err(Error::InvalidInput("system has an observation channel, not a feedback channel".into()));
    }
    nonlinear_rate(sys, grid, n_paths, seed, filter)
}

/// Observation channel `dy = z(t, x) dt + dv`.
pub fn nonlinear_filtering_rate(
    sys: &NonlinearScalarSystem,
    grid: &TimeGrid,
    n_paths: usize,
    seed: &SeedSpec,
    filter: &NonlinearFilter,
) -> Result<NonlinearRate> {
    if sys.is_control() {
        return Err(Error::InvalidInput("system has a feedback channel, not an observation channel".into()));
    }
    nonlinear_rate(sys, grid, n_paths, seed, filter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inforate::control_rate_riccati;
    use crate::linalg::Mat;
    use crate::statespace::{ChannelMap, LtiSystem, LtvSystem};
    use std::sync::Arc;

    fn linear_loop(alpha: f64, k: f64, x0_std: f64) -> NonlinearScalarSystem {
        NonlinearScalarSystem {
            f: Arc::new(move |_, x| alpha * x),
            b: Arc::new(|_, _| 1.0),
            channel: ChannelMap::Control(Arc::new(move |_, x| -k * x)),
            noise_scale: 1.0,
            x0_mean: 0.0,
            x0_std,
            truncation: (-6.0, 6.0),
            autonomous: true,
        }
    }

    #[test]
    fn linear_loop_reduces_to_the_riccati_rate() {
        let grid = TimeGrid::new(6.0, 2e-3).unwrap();
        let sys = linear_loop(1.0, 2.0, 0.5);
        let cfg = GridConfig { n_cells: 400, support: Some((-5.0, 5.0)), ..Default::default() };
        let r = nonlinear_control_rate(&sys, &grid, 64, &SeedSpec::new(3), &NonlinearFilter::Grid(cfg)).unwrap();
        let m = |v: f64| Mat::from_element(1, 1, v);
        let lin = LtvSystem::from(&LtiSystem::new(m(1.0), m(1.0), m(1.0), Some(m(-2.0))).unwrap());
        let ric = control_rate_riccati(&lin, &grid, &m(0.25)).unwrap();
        let se = r.mc.report.mc_std_error.unwrap();
        assert!((r.mc.report.rate - ric.report.rate).abs() < 4.0 * se, "{} vs {}", r.mc.report.rate, ric.report.rate);
        assert!(r.mc.identity_verdicts("t").iter().all(|v| v.passed()));
        assert!(r.mean_square_stability().passed());
        assert!(r.max_clipped_mass.unwrap() <= crate::estimators::kushner::CLIP_TOL);
    }

    #[test]
    fn constant_channel_carries_no_information() {
        let grid = TimeGrid::new(2.0, 1e-2).unwrap();
        let mut sys = linear_loop(-1.0, 0.0, 1.0);
        sys.channel = ChannelMap::Observation(Arc::new(|_, _| 0.7));
        let r = nonlinear_filtering_rate(
            &sys,
            &grid,
            8,
            &SeedSpec::new(1),
            &NonlinearFilter::Particle { n_particles: 200, resample_fraction: 0.5 },
        )
        .unwrap();
        assert!(r.mc.report.rate.abs() < 1e-20);
        assert_eq!(r.resample_count, 0);
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let grid = TimeGrid::new(1.0, 1e-2).unwrap();
        let sys = linear_loop(-1.0, 1.0, 1.0);
        assert!(nonlinear_filtering_rate(&sys, &grid, 4, &SeedSpec::new(1), &NonlinearFilter::default()).is_err());
    }
}
