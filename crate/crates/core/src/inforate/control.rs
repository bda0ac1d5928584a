//! Feedback channel `de = Kx dt + dw` around `dx = Ax dt + B de`.

use super::montecarlo::{run_duncan, DuncanMc, PathIntegrands};
use super::{AveragingWindow, InfoReport, RateRoute};
use crate::error::{Error, Result};
use crate::estimators::{filter_covariance, kalman_bucy_run, KalmanModel};
use crate::linalg::Mat;
use crate::riccati::{integrate_rde, MatField, RdeSolution};
use crate::sde::{simulate_control_loop, InitialState, SeedSpec, SimOptions, TimeGrid};
use crate::statespace::{modal_decompose, LtvSystem};

/// Rate from the antistable Riccati equation `Ṗ_u = A_uP_u + P_uA_uᵀ − P_uGᵀGP_u`
/// with rate density `½tr(G P_u Gᵀ) = tr A_u − ½tr(Ṗ_u P_u⁻¹)`.
#[derive(Debug, Clone)]
pub struct AntistableRate {
    pub report: InfoReport,
    /// Window average of `tr A_u`.
    pub trace_average: f64,
    /// Window average of `½tr(Ṗ_u P_u⁻¹)`, from `½ log det P_u` at the window ends.
    pub log_det_average: f64,
    /// Largest and smallest pointwise `½tr(Ṗ_u P_u⁻¹)` in the window.
    pub log_det_sup: f64,
    pub log_det_inf: f64,
    /// `|rate − (trace_average − log_det_average)|`.
    pub identity_residual: f64,
    pub n_u: usize,
    pub rde: Option<RdeSolution>,
}

fn log_det(p: &Mat, step: usize) -> Result<f64> {
    let chol = p.clone().cholesky().ok_or_else(|| Error::NumericalBreakdown {
        step,
        reason: "antistable covariance is not positive definite".into(),
    })?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Integrate the antistable Riccati equation from `p0` and average its rate
/// density over `window`.
pub fn antistable_rate(a_u: MatField, g_u: MatField, p0: &Mat, grid: &TimeGrid, window: &AveragingWindow) -> Result<AntistableRate> {
    let n_u = p0.nrows();
    if n_u == 0 {
        return Ok(AntistableRate {
            report: InfoReport::constant(RateRoute::Riccati, grid, 0.0),
            trace_average: 0.0,
            log_det_average: 0.0,
            log_det_sup: 0.0,
            log_det_inf: 0.0,
            identity_residual: 0.0,
            n_u,
            rde: None,
        });
    }
    let zero = |_t: f64| Mat::zeros(n_u, n_u);
    let rde = integrate_rde(a_u, g_u, &zero, p0, grid)?;
    let mut density = Vec::with_capacity(rde.p.len());
    let mut trace = Vec::with_capacity(rde.p.len());
    for (k, p) in rde.p.iter().enumerate() {
        let t = grid.time(k);
        let g = g_u(t);
        density.push(0.5 * (&g * p * g.transpose()).trace());
        trace.push(a_u(t).trace());
    }
    let report = InfoReport::from_density(RateRoute::Riccati, grid, window, &density);
    let trace_average = window.trapezoid_mean(&trace);
    let log_det_average =
        0.5 * (log_det(&rde.p[window.k1], window.k1)? - log_det(&rde.p[window.k0], window.k0)?) / window.length();
    let (mut sup, mut inf) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in window.k0..=window.k1 {
        let s = trace[k] - density[k];
        sup = sup.max(s);
        inf = inf.min(s);
    }
    Ok(AntistableRate {
        identity_residual: (report.rate - (trace_average - log_det_average)).abs(),
        report,
        trace_average,
        log_det_average,
        log_det_sup: sup,
        log_det_inf: inf,
        n_u,
        rde: Some(rde),
    })
}

/// The system in modal form plus the similarity used, if any.
pub fn modal_form(sys: &LtvSystem) -> Result<(LtvSystem, Option<Mat>)> {
    if sys.modal_split().is_some() {
        return Ok((sys.clone(), None));
    }
    if sys.is_constant() {
        let dec = modal_decompose(&sys.at(0.0))?;
        return Ok((dec.to_ltv(), Some(dec.t)));
    }
    Err(Error::InvalidInput(
        "time-varying systems must be supplied in modal form (stable block first)".into(),
    ))
}

/// Initial covariance of the antistable coordinates.
pub(crate) fn antistable_block(cov: &Mat, t: Option<&Mat>, n_s: usize) -> Mat {
    let c = match t {
        Some(t) => t * cov * t.transpose(),
        None => cov.clone(),
    };
    let n = c.nrows();
    c.view((n_s, n_s), (n - n_s, n - n_s)).into_owned()
}

/// Deterministic rate `(1/L)∫(tr A_u − ½tr(Ṗ_uP_u⁻¹))` over the trailing
/// window, from `x(0) ~ (·, x0_cov)`.
pub fn control_rate_riccati(sys: &LtvSystem, grid: &TimeGrid, x0_cov: &Mat) -> Result<AntistableRate> {
    if !sys.has_controller() {
        return Err(Error::InvalidInput("control rate needs a feedback gain K".into()));
    }
    if x0_cov.nrows() != sys.dim() {
        return Err(Error::Dimension("initial covariance does not match the plant".into()));
    }
    let (modal, t) = modal_form(sys)?;
    let n_s = modal.modal_split().unwrap_or(0);
    let p0 = antistable_block(x0_cov, t.as_ref(), n_s);
    let window = AveragingWindow::trailing(grid, sys.period());
    let a_u = |t: f64| modal.a_u(t).expect("modal split is set");
    let k_u = |t: f64| modal.k_u(t).expect("modal split is set").expect("controller is set");
    antistable_rate(&a_u, &k_u, &p0, grid, &window)
}

/// Duncan estimate `½E‖u − û‖²` with `û` from the Kalman–Bucy filter of `u = Kx` given `e`.
pub fn control_rate_monte_carlo(
    sys: &LtvSystem,
    grid: &TimeGrid,
    x0: &InitialState,
    n_paths: usize,
    seed: &SeedSpec,
) -> Result<DuncanMc> {
    let cov = filter_covariance(sys, KalmanModel::Feedback, grid, &x0.cov)?;
    let cond_var = cov.mmse_integrand(sys);
    let window = AveragingWindow::trailing(grid, sys.period());
    let opts = SimOptions::default();
    run_duncan(RateRoute::MonteCarlo, grid, &window, n_paths, |i| {
        let path = simulate_control_loop(sys, grid, seed, i, x0, &opts)?;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statespace::LtiSystem;
    use std::sync::Arc;

    fn scalar(alpha: f64, k: f64) -> LtvSystem {
        let m = |v: f64| Mat::from_element(1, 1, v);
        LtvSystem::from(&LtiSystem::new(m(alpha), m(1.0), m(1.0), Some(m(-k))).unwrap())
    }

    #[test]
    fn scalar_unstable_plant_rate_is_its_pole() {
        let grid = TimeGrid::new(50.0, 1e-3).unwrap();
        let r = control_rate_riccati(&scalar(1.0, 2.0), &grid, &Mat::from_element(1, 1, 0.25)).unwrap();
        assert!((r.report.rate - 1.0).abs() < 1e-4, "{}", r.report.rate);
        assert!(r.identity_residual < 1e-8);
        assert!(r.report.converged);
    }

    #[test]
    fn stable_plant_has_zero_rate() {
        let grid = TimeGrid::new(10.0, 1e-3).unwrap();
        let r = control_rate_riccati(&scalar(-1.0, 2.0), &grid, &Mat::from_element(1, 1, 0.25)).unwrap();
        assert_eq!(r.report.rate, 0.0);
        assert_eq!(r.n_u, 0);
    }

    #[test]
    fn periodic_modal_system_rate_is_mean_trace() {
        let a: crate::statespace::MatFn =
            Arc::new(|t: f64| Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.5 + t.sin()]));
        let b: crate::statespace::MatFn = Arc::new(|_| Mat::identity(2, 2));
        let k: crate::statespace::MatFn =
            Arc::new(|t: f64| Mat::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -(2.5 + t.sin())]));
        let h = 20.0 * std::f64::consts::PI;
        let sys = LtvSystem::new(a, b.clone(), b, Some(k))
            .unwrap()
            .with_modal_form(1, h)
            .unwrap()
            .with_period(2.0 * std::f64::consts::PI)
            .unwrap();
        let grid = TimeGrid::new(h, 1e-3).unwrap();
        let r = control_rate_riccati(&sys, &grid, &Mat::identity(2, 2)).unwrap();
        assert!((r.trace_average - 1.5).abs() < 1e-6);
        assert!((r.report.rate - 1.5).abs() < 1e-6, "{}", r.report.rate);
        assert!(r.log_det_sup > r.log_det_inf);
    }

    #[test]
    fn monte_carlo_route_matches_riccati_route() {
        let sys = LtvSystem::from(
            &LtiSystem::new(
                Mat::from_diagonal(&crate::linalg::Vector::from_vec(vec![1.0, -2.0])),
                Mat::identity(2, 2),
                Mat::identity(2, 2),
                Some(Mat::from_diagonal(&crate::linalg::Vector::from_vec(vec![-2.0, 1.0]))),
            )
            .unwrap(),
        );
        let grid = TimeGrid::new(10.0, 1e-3).unwrap();
        let x0 = InitialState::standard(2);
        let ric = control_rate_riccati(&sys, &grid, &x0.cov).unwrap();
        let mc = control_rate_monte_carlo(&sys, &grid, &x0, 300, &SeedSpec::new(4)).unwrap();
        let se = mc.report.mc_std_error.unwrap();
        assert!((mc.report.rate - ric.report.rate).abs() < 4.0 * se, "{} vs {} ± {se}", mc.report.rate, ric.report.rate);
        assert!(mc.identity_verdicts("t").iter().all(|v| v.passed()));
    }
}
