//! Spectral lower and upper bounds on time-varying rates.

use std::sync::Arc;

use super::control::{control_rate_monte_carlo, control_rate_riccati, modal_form, AntistableRate};
use super::montecarlo::DuncanMc;
use super::{Quantity, Verdict, SIGMA_MULTIPLIER};
use crate::error::Result;
use crate::linalg::Mat;
use crate::sde::{InitialState, SeedSpec, TimeGrid};
use crate::statespace::{dichotomy_spectrum, eigenvalues, LtvSystem, MatFn, SpectralInterval};

/// Tolerance on deterministic terms of the chains.
pub const DETERMINISTIC_TOL: f64 = 1e-6;
/// Steklov averaging window for the dichotomy spectrum of `A_u`.
pub const SPECTRUM_WINDOW: f64 = 1.0;

/// Spectral intervals `[λ̲ᵢ, λ̄ᵢ]` of the antistable block.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBounds {
    pub intervals: Vec<SpectralInterval>,
    /// `Σλ̲ᵢ`.
    pub lower_sum: f64,
    /// `Σλ̄ᵢ`.
    pub upper_sum: f64,
    /// Intervals are points (eigenvalue real parts).
    pub exact: bool,
}

/// Spectrum of `A_u(t)`: eigenvalue real parts for constant plants, a
/// numerical dichotomy spectrum otherwise.
pub fn antistable_spectrum(sys: &LtvSystem, grid: &TimeGrid) -> Result<SpectralBounds> {
    let (modal, _) = modal_form(sys)?;
    let n_s = modal.modal_split().unwrap_or(0);
    let n_u = modal.dim() - n_s;
    let intervals = if n_u == 0 {
        Vec::new()
    } else if modal.is_constant() {
        eigenvalues(&modal.a_u(0.0)?).iter().map(|e| SpectralInterval { lower: e.re, upper: e.re }).collect()
    } else {
        let m = modal.clone();
        let a_u: MatFn = Arc::new(move |t| m.a_u(t).expect("modal split is set"));
        let id: MatFn = Arc::new(move |_| Mat::identity(n_u, n_u));
        let block = LtvSystem::new(a_u, id.clone(), id, None)?;
        let horizon = grid.end() - grid.t0;
        dichotomy_spectrum(&block, horizon, grid.dt, SPECTRUM_WINDOW.min(0.5 * horizon))?
    };
    Ok(SpectralBounds {
        lower_sum: intervals.iter().map(|i| i.lower).sum(),
        upper_sum: intervals.iter().map(|i| i.upper).sum(),
        exact: modal.is_constant(),
        intervals,
    })
}

/// Checks shared by feedback and vanishing-noise rates:
/// `rate ≥ tr-average ≥ Σλ̲`, and
/// `Σλ̲ − sup ½tr(ṖP⁻¹) ≤ rate ≤ Σλ̄ − inf ½tr(ṖP⁻¹)`.
pub fn rate_bounds_verdicts(rate: &AntistableRate, spectrum: &SpectralBounds) -> Vec<Verdict> {
    let r = rate.report.rate;
    let tol = DETERMINISTIC_TOL;
    let b = "1e-6";
    let mut out = vec![
        Verdict::at_least("rate_ge_trace_average", r, rate.trace_average, tol, b),
        Verdict::at_least("trace_average_ge_spectral_lower", rate.trace_average, spectrum.lower_sum, tol, b),
        Verdict::at_least("rate_ge_lower_bound", r, spectrum.lower_sum - rate.log_det_sup, tol, b),
        Verdict::at_most("rate_le_upper_bound", r, spectrum.upper_sum - rate.log_det_inf, tol, b),
        Verdict::at_least("rate_ge_spectral_lower", r, spectrum.lower_sum, tol, b),
        Verdict::at_most("rate_le_spectral_upper", r, spectrum.upper_sum, tol, b),
    ];
    if spectrum.exact {
        out.push(Verdict::equal("rate_eq_pole_sum", r, spectrum.lower_sum, 1e-4, "1e-4"));
    }
    out
}

#[derive(Debug, Clone)]
pub struct BoundsReport {
    pub riccati: AntistableRate,
    pub monte_carlo: Option<DuncanMc>,
    pub spectrum: SpectralBounds,
    pub verdicts: Vec<Verdict>,
}

impl BoundsReport {
    pub fn quantities(&self, prefix: &str) -> Vec<Quantity> {
        let mut q = self.riccati.report.quantities(&format!("{prefix}.riccati"));
        q.push(Quantity::new(format!("{prefix}.trace_average"), self.riccati.trace_average));
        q.push(Quantity::new(format!("{prefix}.log_det_sup"), self.riccati.log_det_sup));
        q.push(Quantity::new(format!("{prefix}.log_det_inf"), self.riccati.log_det_inf));
        q.push(Quantity::new(format!("{prefix}.spectral_lower"), self.spectrum.lower_sum));
        q.push(Quantity::new(format!("{prefix}.spectral_upper"), self.spectrum.upper_sum));
        if let Some(mc) = &self.monte_carlo {
            q.extend(mc.quantities(&format!("{prefix}.monte_carlo")));
        }
        q
    }
}

/// The feedback inequality chain with the Riccati, spectral and (if
/// `n_paths > 0`) Monte Carlo routes.
pub fn ltv_rate_bounds_check(
    sys: &LtvSystem,
    grid: &TimeGrid,
    x0: &InitialState,
    n_paths: usize,
    seed: &SeedSpec,
) -> Result<BoundsReport> {
    let riccati = control_rate_riccati(sys, grid, &x0.cov)?;
    let spectrum = antistable_spectrum(sys, grid)?;
    let monte_carlo = if n_paths > 0 { Some(control_rate_monte_carlo(sys, grid, x0, n_paths, seed)?) } else { None };
    let mut verdicts = Vec::new();
    if let Some(mc) = &monte_carlo {
        let se = mc.report.mc_std_error.unwrap_or(0.0);
        verdicts.push(Verdict::at_least(
            "conditional_rate_ge_rate",
            mc.report.rate,
            riccati.report.rate,
            SIGMA_MULTIPLIER * se,
            "4σ",
        ));
    }
    verdicts.extend(rate_bounds_verdicts(&riccati, &spectrum));
    Ok(BoundsReport { riccati, monte_carlo, spectrum, verdicts })
}
