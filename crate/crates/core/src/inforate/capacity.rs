//! Capacity sandwich `C_f ≥ D̄_cond = rate + D̄_marg` under an average power constraint.

use std::fmt;

use super::montecarlo::DuncanMc;
use super::{Estimate, Quantity, Verdict, SIGMA_MULTIPLIER};
use crate::builtins::TimeFn;
use crate::error::{Error, Result};

/// Listed violation times are capped at this many.
const MAX_LISTED_VIOLATIONS: usize = 20;

/// Power bound `ρ(t) ≥ E‖u(t)‖²`.
#[derive(Clone, Default)]
pub enum PowerProfile {
    /// `ρ ≡ sup_t` of the ensemble `E‖u‖²` profile.
    #[default]
    SupOfEmpirical,
    Constant(f64),
    Function(TimeFn),
}

impl fmt::Debug for PowerProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PowerProfile::SupOfEmpirical => f.write_str("SupOfEmpirical"),
            PowerProfile::Constant(c) => write!(f, "Constant({c})"),
            PowerProfile::Function(_) => f.write_str("Function(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    /// `de = u dt + dw`, reference measure of `w`.
    Feedback,
    /// `dy = z dt + dv`, reference measure of `v`.
    Filtering,
}

impl ChannelKind {
    pub fn signal_name(self) -> &'static str {
        match self {
            ChannelKind::Feedback => "u",
            ChannelKind::Filtering => "z",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CapacityBounds {
    pub kind: ChannelKind,
    /// `½⟨ρ⟩` over the rate window.
    pub c_f: f64,
    pub divergence_conditional: Estimate,
    pub divergence_marginal: Estimate,
    pub rate: Estimate,
    /// Smallest `ρ(t_k) − E‖u(t_k)‖²`.
    pub power_margin: f64,
    pub verdicts: Vec<Verdict>,
}

impl CapacityBounds {
    pub fn quantities(&self, prefix: &str) -> Vec<Quantity> {
        let e = |n: &str, v: Estimate| Quantity::with_error(format!("{prefix}.{n}"), v.mean, v.std_error);
        vec![
            Quantity::new(format!("{prefix}.capacity"), self.c_f),
            e("divergence_conditional", self.divergence_conditional),
            e("divergence_marginal", self.divergence_marginal),
            e("rate", self.rate),
            Quantity::new(format!("{prefix}.power_margin"), self.power_margin),
        ]
    }
}

/// Check the capacity chain on a Monte Carlo run.
///
/// Fails with [`Error::PowerConstraintViolated`] when `ρ` lies below the
/// empirical `E‖u‖²` anywhere on the grid.
pub fn capacity_check(mc: &DuncanMc, profile: &PowerProfile, kind: ChannelKind) -> Result<CapacityBounds> {
    let power = &mc.profiles.signal;
    let grid = &mc.grid;
    let rho: Vec<f64> = match profile {
        PowerProfile::SupOfEmpirical => vec![power.iter().copied().fold(0.0, f64::max); power.len()],
        PowerProfile::Constant(c) => vec![*c; power.len()],
        PowerProfile::Function(f) => (0..power.len()).map(|k| f(grid.time(k))).collect(),
    };
    if rho.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidInput("power profile is not finite".into()));
    }
    let violations: Vec<f64> = (0..power.len()).filter(|&k| rho[k] < power[k]).map(|k| grid.time(k)).collect();
    if let Some(&first_time) = violations.first() {
        return Err(Error::PowerConstraintViolated {
            first_time,
            times: violations.into_iter().take(MAX_LISTED_VIOLATIONS).collect(),
        });
    }
    let power_margin = rho.iter().zip(power).map(|(r, p)| r - p).fold(f64::INFINITY, f64::min);
    let c_f = 0.5 * mc.window.trapezoid_mean(&rho);
    let d_cond = mc.divergence_conditional;
    let d_marg = mc.divergence_marginal;
    let rate = mc.rate();
    let chain = mc.estimate(|p| p.error + p.estimate);
    let k = SIGMA_MULTIPLIER;
    let s = kind.signal_name();
    let verdicts = vec![
        Verdict::at_least("power_constraint", power_margin, 0.0, 0.0, "exact"),
        Verdict::at_least("capacity_ge_conditional_divergence", c_f, d_cond.mean, k * d_cond.std_error, "4σ"),
        Verdict::at_least("capacity_ge_rate_plus_marginal_divergence", c_f, chain.mean, k * chain.std_error, "4σ"),
        Verdict::equal(
            "conditional_divergence_eq_rate_plus_marginal",
            d_cond.mean,
            chain.mean,
            k * mc.form_gap.std_error,
            "4σ",
        ),
        Verdict::at_least("rate_nonnegative", rate.mean, 0.0, k * rate.std_error, "4σ"),
        Verdict::at_least("marginal_divergence_nonnegative", d_marg.mean, 0.0, k * d_marg.std_error, "4σ"),
        Verdict::at_least("conditional_divergence_nonnegative", d_cond.mean, 0.0, k * d_cond.std_error, "4σ"),
    ]
    .into_iter()
    .map(|v| v.with_prefix(&format!("capacity_{s}")))
    .collect();
    Ok(CapacityBounds {
        kind,
        c_f,
        divergence_conditional: d_cond,
        divergence_marginal: d_marg,
        rate,
        power_margin,
        verdicts,
    })
}
