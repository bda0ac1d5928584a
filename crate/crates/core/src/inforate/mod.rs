//! Total information, information rates, divergence rates and capacity
//! bounds, computed along two independent routes:
//!
//! * deterministic: Riccati solutions and spectra;
//! * Monte Carlo: Duncan's identity `I = ½E∫‖u − û‖²` with the causal MMSE
//!   estimate `û` from a filter run along each simulated path.
//!
//! Rates are finite-horizon averages. Each report carries the average over
//! a trailing window `[H − L, H]` (the rate), the average over `[0, H]`,
//! and their gap as a convergence diagnostic. `L = H/2`, rounded down to a
//! whole number of periods for periodic systems.

mod bode;
mod bounds;
mod capacity;
mod control;
mod filtering;
mod montecarlo;
mod nonlinear;
pub mod report;

pub use bode::{ltv_bode_integral, BodeReport};
pub use bounds::{antistable_spectrum, ltv_rate_bounds_check, rate_bounds_verdicts, BoundsReport, SpectralBounds};
pub use capacity::{capacity_check, CapacityBounds, ChannelKind, PowerProfile};
pub use control::{antistable_rate, control_rate_monte_carlo, control_rate_riccati, modal_form, AntistableRate};
pub use filtering::{filtering_rate, filtering_rate_deterministic, filtering_rate_monte_carlo, vanishing_noise_limit, FilteringSweep};
pub use montecarlo::{DuncanMc, PathIntegrands, PathSummary, Profiles};
pub use nonlinear::{nonlinear_control_rate, nonlinear_filtering_rate, nonlinear_rate, NonlinearFilter, NonlinearRate};
pub use report::{Quantity, Relation, Verdict};

use crate::linalg::{compensated_sum, mean_and_std_error};
use crate::sde::TimeGrid;

/// Relative tail deviation above which a rate is marked non-converged.
pub const CONVERGENCE_TOL: f64 = 0.05;
/// Multiplier on Monte Carlo standard errors in every statistical check.
pub const SIGMA_MULTIPLIER: f64 = 4.0;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let (mean, std_error) = mean_and_std_error(values);
        Self { mean, std_error }
    }

    pub fn exact(mean: f64) -> Self {
        Self { mean, std_error: 0.0 }
    }
}

/// Grid index range `[k0, k1]` of an averaging window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragingWindow {
    pub k0: usize,
    pub k1: usize,
    pub start: f64,
    pub end: f64,
}

impl AveragingWindow {
    /// The trailing window of `grid`: half the horizon, or the largest
    /// whole number of periods not exceeding it.
    pub fn trailing(grid: &TimeGrid, period: Option<f64>) -> Self {
        let h = grid.n_steps as f64 * grid.dt;
        let mut len = 0.5 * h;
        if let Some(p) = period {
            let m = (len / p + 1e-9).floor();
            if m >= 1.0 {
                len = m * p;
            }
        }
        let k0 = grid.n_steps - ((len / grid.dt).round() as usize).min(grid.n_steps);
        Self::from_indices(grid, k0, grid.n_steps)
    }

    pub fn full(grid: &TimeGrid) -> Self {
        Self::from_indices(grid, 0, grid.n_steps)
    }

    pub fn from_indices(grid: &TimeGrid, k0: usize, k1: usize) -> Self {
        Self { k0, k1, start: grid.time(k0), end: grid.time(k1) }
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    /// Left Riemann average, matching the Itô discretization of the
    /// simulated integrals.
    pub fn left_mean(&self, values: &[f64]) -> f64 {
        let n = (self.k1 - self.k0) as f64;
        compensated_sum(values[self.k0..self.k1].iter().copied()) / n
    }

    /// Trapezoidal average, for smooth deterministic integrands.
    pub fn trapezoid_mean(&self, values: &[f64]) -> f64 {
        let n = (self.k1 - self.k0) as f64;
        let inner = compensated_sum(values[self.k0 + 1..self.k1].iter().copied());
        (inner + 0.5 * (values[self.k0] + values[self.k1])) / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateRoute {
    Riccati,
    Spectral,
    MonteCarlo,
    Kushner,
    Particle,
}

impl RateRoute {
    pub fn as_str(self) -> &'static str {
        match self {
            RateRoute::Riccati => "riccati",
            RateRoute::Spectral => "spectral",
            RateRoute::MonteCarlo => "monte_carlo",
            RateRoute::Kushner => "kushner",
            RateRoute::Particle => "particle",
        }
    }
}

/// Total information and its rate over one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoReport {
    pub route: RateRoute,
    pub horizon: f64,
    /// Nats over `[0, H]`.
    pub total_information: f64,
    /// Nats per unit time, averaged over `window`.
    pub rate: f64,
    pub window: (f64, f64),
    pub horizon_average: f64,
    /// `|rate − horizon_average|`.
    pub tail_deviation: f64,
    pub converged: bool,
    pub mc_std_error: Option<f64>,
    pub total_std_error: Option<f64>,
}

impl InfoReport {
    /// Report for a deterministic rate density `r(t_k) ≥ 0`.
    pub fn from_density(route: RateRoute, grid: &TimeGrid, window: &AveragingWindow, density: &[f64]) -> Self {
        let full = AveragingWindow::full(grid);
        let rate = window.trapezoid_mean(density);
        let horizon_average = full.trapezoid_mean(density);
        Self::assemble(route, grid, window, rate, horizon_average, None, None)
    }

    /// A rate known in closed form or from a steady state.
    pub fn constant(route: RateRoute, grid: &TimeGrid, rate: f64) -> Self {
        let w = AveragingWindow::full(grid);
        Self::assemble(route, grid, &w, rate, rate, None, None)
    }

    pub(crate) fn assemble(
        route: RateRoute,
        grid: &TimeGrid,
        window: &AveragingWindow,
        rate: f64,
        horizon_average: f64,
        se: Option<f64>,
        total_se: Option<f64>,
    ) -> Self {
        let horizon = grid.n_steps as f64 * grid.dt;
        let tail_deviation = (rate - horizon_average).abs();
        let noise = se.map_or(0.0, |s| SIGMA_MULTIPLIER * s);
        Self {
            route,
            horizon,
            total_information: horizon * horizon_average,
            rate,
            window: (window.start, window.end),
            horizon_average,
            tail_deviation,
            converged: tail_deviation <= CONVERGENCE_TOL * rate.abs() + noise + 1e-12,
            mc_std_error: se,
            total_std_error: total_se,
        }
    }

    pub fn quantities(&self, prefix: &str) -> Vec<Quantity> {
        let q = |name: &str, v: f64, se: Option<f64>| Quantity {
            name: format!("{prefix}.{name}"),
            value: v,
            std_error: se,
        };
        vec![
            q("rate", self.rate, self.mc_std_error),
            q("total_information", self.total_information, self.total_std_error),
            q("horizon_average", self.horizon_average, None),
            q("tail_deviation", self.tail_deviation, None),
            q("converged", if self.converged { 1.0 } else { 0.0 }, None),
        ]
    }

    pub const CSV_HEADER: &'static str =
        "route,horizon,window_start,window_end,rate,rate_se,total_information,total_se,horizon_average,tail_deviation,converged";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{},{:.12e},{},{:.12e},{:.12e},{}",
            self.route.as_str(),
            self.horizon,
            self.window.0,
            self.window.1,
            self.rate,
            opt(self.mc_std_error),
            self.total_information,
            opt(self.total_std_error),
            self.horizon_average,
            self.tail_deviation,
            self.converged
        )
    }

    /// Non-negativity of mutual information up to sampling noise.
    pub fn nonnegativity(&self, name: &str) -> Verdict {
        let se = self.total_std_error.unwrap_or(0.0);
        Verdict::at_least(name, self.total_information, 0.0, SIGMA_MULTIPLIER * se + 1e-12, "4σ")
    }
}

impl std::fmt::Display for InfoReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "route            {}", self.route.as_str())?;
        match self.mc_std_error {
            Some(se) => writeln!(f, "rate             {:.6} ± {:.6} nats/time", self.rate, se)?,
            None => writeln!(f, "rate             {:.6} nats/time", self.rate)?,
        }
        writeln!(f, "window           [{:.4}, {:.4}]", self.window.0, self.window.1)?;
        writeln!(f, "total info       {:.6} nats over [0, {:.4}]", self.total_information, self.horizon)?;
        writeln!(f, "horizon average  {:.6}", self.horizon_average)?;
        write!(
            f,
            "tail deviation   {:.3e}{}",
            self.tail_deviation,
            if self.converged { "" } else { "  (not converged)" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_window_is_half_the_horizon() {
        let grid = TimeGrid::new(10.0, 0.01).unwrap();
        let w = AveragingWindow::trailing(&grid, None);
        assert_eq!((w.k0, w.k1), (500, 1000));
        assert!((w.length() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_window_spans_whole_periods() {
        let p = 2.0 * std::f64::consts::PI;
        let grid = TimeGrid::new(5.5 * p, 1e-3).unwrap();
        let w = AveragingWindow::trailing(&grid, Some(p));
        assert!((w.length() - 2.0 * p).abs() < 1e-3);
    }

    #[test]
    fn averages_of_a_linear_function() {
        let grid = TimeGrid::new(2.0, 0.5).unwrap();
        let v: Vec<f64> = (0..=4).map(|k| grid.time(k)).collect();
        let w = AveragingWindow::full(&grid);
        assert!((w.trapezoid_mean(&v) - 1.0).abs() < 1e-15);
        assert!((w.left_mean(&v) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn convergence_flag_uses_relative_tail() {
        let grid = TimeGrid::new(10.0, 0.01).unwrap();
        let w = AveragingWindow::trailing(&grid, None);
        let r = InfoReport::assemble(RateRoute::Riccati, &grid, &w, 1.0, 0.9, None, None);
        assert!(!r.converged);
        let r = InfoReport::assemble(RateRoute::Riccati, &grid, &w, 1.0, 0.97, None, None);
        assert!(r.converged);
        assert!((r.total_information - 9.7).abs() < 1e-12);
    }
}
