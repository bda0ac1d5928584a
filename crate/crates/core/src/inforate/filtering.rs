//! Observation channel `dy = Cx dt + dv` of `dx = Ax dt + √ε B dw̄`.

use super::control::{antistable_block, antistable_rate, modal_form, AntistableRate};
use super::montecarlo::{run_duncan, DuncanMc, PathIntegrands};
use super::{AveragingWindow, InfoReport, RateRoute, Verdict, SIGMA_MULTIPLIER};
use crate::error::{Error, Result};
use crate::estimators::{filter_covariance, kalman_bucy_run, KalmanModel};
use crate::linalg::Mat;
use crate::riccati::{integrate_rde, solve_are};
use crate::sde::{simulate_observation, InitialState, SeedSpec, SimOptions, TimeGrid};
use crate::statespace::{unstable_pole_sum, LtvSystem};

/// Rates over a descending list of noise intensities together with the
/// vanishing-noise limit.
#[derive(Debug, Clone)]
pub struct FilteringSweep {
    pub epsilons: Vec<f64>,
    pub deterministic: Vec<InfoReport>,
    pub monte_carlo: Vec<Option<DuncanMc>>,
    /// Reduced antistable Riccati equation without process noise.
    pub limit: AntistableRate,
    /// Straight-line extrapolation to `ε = 0` through the two smallest `ε`.
    pub extrapolated: Option<f64>,
    /// `Σλᵢ⁺(A)` for constant plants.
    pub pole_sum: Option<f64>,
}

impl FilteringSweep {
    /// Nonincreasing rates toward the limit, and every rate above the limit.
    pub fn monotonicity_verdicts(&self) -> Vec<Verdict> {
        let mut out = Vec::new();
        let det_tol = |r: f64| 1e-10 * (1.0 + r.abs());
        for (i, pair) in self.deterministic.windows(2).enumerate() {
            out.push(Verdict::at_least(
                format!("rate_nonincreasing[eps={:e}>={:e}]", self.epsilons[i], self.epsilons[i + 1]),
                pair[0].rate,
                pair[1].rate,
                det_tol(pair[0].rate),
                "1e-10 rel",
            ));
        }
        let lim = self.limit.report.rate;
        for (eps, r) in self.epsilons.iter().zip(&self.deterministic) {
            out.push(Verdict::at_least(format!("rate_above_limit[eps={eps:e}]"), r.rate, lim, det_tol(lim), "1e-10 rel"));
        }
        for (eps, mc) in self.epsilons.iter().zip(&self.monte_carlo) {
            if let Some(mc) = mc {
                let se = mc.report.mc_std_error.unwrap_or(0.0);
                out.push(Verdict::at_least(
                    format!("mc_rate_above_limit[eps={eps:e}]"),
                    mc.report.rate,
                    lim,
                    SIGMA_MULTIPLIER * se,
                    "4σ",
                ));
            }
        }
        out
    }
}

/// Deterministic rate `½⟨tr(C P Cᵀ)⟩`: the algebraic Riccati solution for
/// constant plants, otherwise the trailing-window average of the Riccati
/// equation started at `x0_cov`.
pub fn filtering_rate_deterministic(sys: &LtvSystem, grid: &TimeGrid, epsilon: f64, x0_cov: &Mat) -> Result<InfoReport> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if sys.is_constant() {
        let lti = sys.at(0.0);
        let m = lti.b.ncols();
        let p = lti.c.nrows();
        let are = solve_are(&lti, &(Mat::identity(m, m) * epsilon), &Mat::identity(p, p))?;
        let rate = 0.5 * (&lti.c * &are.p * lti.c.transpose()).trace();
        return Ok(InfoReport::constant(RateRoute::Riccati, grid, rate));
    }
    let a = |t: f64| sys.a(t);
    let c = |t: f64| sys.c(t);
    let q = |t: f64| {
        let b = sys.b(t);
        &b * b.transpose() * epsilon
    };
    let rde = integrate_rde(&a, &c, &q, x0_cov, grid)?;
    let density: Vec<f64> = rde
        .p
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let ck = sys.c(grid.time(k));
            0.5 * (&ck * p * ck.transpose()).trace()
        })
        .collect();
    let window = AveragingWindow::trailing(grid, sys.period());
    Ok(InfoReport::from_density(RateRoute::Riccati, grid, &window, &density))
}

/// Duncan estimate `½E‖z − ẑ‖²` along simulated observation paths.
pub fn filtering_rate_monte_carlo(
    sys: &LtvSystem,
    grid: &TimeGrid,
    epsilon: f64,
    x0: &InitialState,
    n_paths: usize,
    seed: &SeedSpec,
) -> Result<DuncanMc> {
    let cov = filter_covariance(sys, KalmanModel::Observation { epsilon }, grid, &x0.cov)?;
    let cond_var = cov.mmse_integrand(sys);
    let window = AveragingWindow::trailing(grid, sys.period());
    let opts = SimOptions::default();
    run_duncan(RateRoute::MonteCarlo, grid, &window, n_paths, |i| {
        let path = simulate_observation(sys, epsilon, grid, seed, i, x0, &opts)?;
        let run = kalman_bucy_run(sys, &path, &cov, &x0.mean)?;
        Ok(PathIntegrands {
            signal: run.signal_sq,
            estimate: run.estimate_sq,
            error: run.error_sq,
            conditional_variance: Some(cond_var.clone()),
            state_sq: path.states.column_iter().map(|c| c.norm_squared()).collect(),
        })
    })
}

/// Rate without process noise: only the antistable block carries
/// information, `(1/L)∫(tr A_u − ½tr(Ṗ_uP_u⁻¹))` with `G = C_u`.
pub fn vanishing_noise_limit(sys: &LtvSystem, grid: &TimeGrid, x0_cov: &Mat) -> Result<AntistableRate> {
    let (modal, t) = modal_form(sys)?;
    let n_s = modal.modal_split().unwrap_or(0);
    let p0 = antistable_block(x0_cov, t.as_ref(), n_s);
    let window = AveragingWindow::trailing(grid, sys.period());
    let a_u = |t: f64| modal.a_u(t).expect("modal split is set");
    let c_u = |t: f64| modal.c_u(t).expect("modal split is set");
    antistable_rate(&a_u, &c_u, &p0, grid, &window)
}

/// Deterministic rates for each `ε` (descending), optional Monte Carlo
/// rates (`n_paths = 0` skips them), and the vanishing-noise limit.
pub fn filtering_rate(
    sys: &LtvSystem,
    grid: &TimeGrid,
    epsilons: &[f64],
    x0: &InitialState,
    n_paths: usize,
    seed: &SeedSpec,
) -> Result<FilteringSweep> {
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidInput("epsilons must be positive".into()));
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("epsilons must be strictly descending".into()));
    }
    let deterministic = epsilons
        .iter()
        .map(|&e| filtering_rate_deterministic(sys, grid, e, &x0.cov))
        .collect::<Result<Vec<_>>>()?;
    let monte_carlo = epsilons
        .iter()
        .map(|&e| {
            if n_paths == 0 {
                Ok(None)
            } else {
                filtering_rate_monte_carlo(sys, grid, e, x0, n_paths, seed).map(Some)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let limit = vanishing_noise_limit(sys, grid, &x0.cov)?;
    let extrapolated = (epsilons.len() >= 2).then(|| {
        let n = epsilons.len();
        let (ea, eb) = (epsilons[n - 2], epsilons[n - 1]);
        let (ra, rb) = (deterministic[n - 2].rate, deterministic[n - 1].rate);
        rb - eb * (ra - rb) / (ea - eb)
    });
    let pole_sum = if sys.is_constant() { Some(unstable_pole_sum(&sys.at(0.0))?.unstable_sum) } else { None };
    Ok(FilteringSweep { epsilons: epsilons.to_vec(), deterministic, monte_carlo, limit, extrapolated, pole_sum })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;
    use crate::statespace::LtiSystem;

    fn diag_plant(a: &[f64]) -> LtvSystem {
        let n = a.len();
        LtvSystem::from(
            &LtiSystem::new(Mat::from_diagonal(&Vector::from_row_slice(a)), Mat::identity(n, n), Mat::identity(n, n), None)
                .unwrap(),
        )
    }

    #[test]
    fn small_noise_rate_is_the_unstable_pole_sum() {
        let sys = diag_plant(&[1.0, -2.0]);
        let grid = TimeGrid::new(20.0, 1e-3).unwrap();
        let sweep = filtering_rate(&sys, &grid, &[1e-2, 1e-4, 1e-6], &InitialState::standard(2), 0, &SeedSpec::new(1)).unwrap();
        assert!((sweep.deterministic[2].rate - 1.0).abs() < 1e-3);
        assert!((sweep.limit.report.rate - 1.0).abs() < 1e-6);
        assert!((sweep.extrapolated.unwrap() - 1.0).abs() < 1e-6);
        assert!(sweep.monotonicity_verdicts().iter().all(|v| v.passed()));
    }

    #[test]
    fn stable_plant_limit_is_zero() {
        let sys = diag_plant(&[-1.0, -2.0]);
        let grid = TimeGrid::new(5.0, 1e-3).unwrap();
        let sweep = filtering_rate(&sys, &grid, &[1e-2, 1e-4], &InitialState::standard(2), 0, &SeedSpec::new(1)).unwrap();
        assert_eq!(sweep.limit.report.rate, 0.0);
        assert!(sweep.deterministic[1].rate < 1e-4);
    }

    #[test]
    fn monte_carlo_matches_the_algebraic_riccati_rate() {
        let sys = diag_plant(&[1.0, -2.0]);
        let grid = TimeGrid::new(10.0, 1e-3).unwrap();
        let x0 = InitialState::standard(2);
        let det = filtering_rate_deterministic(&sys, &grid, 0.1, &x0.cov).unwrap();
        let mc = filtering_rate_monte_carlo(&sys, &grid, 0.1, &x0, 200, &SeedSpec::new(6)).unwrap();
        let se = mc.report.mc_std_error.unwrap();
        assert!((mc.report.rate - det.rate).abs() < 4.0 * se, "{} vs {} ± {se}", mc.report.rate, det.rate);
    }
}
