//! Time-varying Bode integral, by the antistable trace and by the
//! sensitivity outer-factor kernel at coincident times.

use std::sync::Arc;

use super::control::modal_form;
use super::{AveragingWindow, Quantity, Verdict};
use crate::error::{Error, Result};
use crate::riccati::control_rde_x;
use crate::sde::TimeGrid;
use crate::statespace::{antistable_trace_integral, eigenvalues, lyapunov_exponents, LtvSystem, MatFn};

/// Relative size of `C(t)B(t)` accepted as zero.
const CB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BodeReport {
    /// `(1/2H)∫tr[2A_u]`, the antistable trace average.
    pub trace_route: f64,
    /// `(1/2H)∫tr[(BᵀX − C)B]`.
    pub kernel_route: f64,
    pub gap: f64,
    /// Largest `‖C(t)B(t)‖` on the grid.
    pub max_cb: f64,
    /// Largest real part (LTI) or top Lyapunov exponent (LTV) of `A − BC`.
    pub closed_loop_abscissa: f64,
    pub closed_loop_stable: bool,
}

impl BodeReport {
    pub fn verdicts(&self, tol: f64) -> Vec<Verdict> {
        vec![
            Verdict::equal("bode_routes_agree", self.kernel_route, self.trace_route, tol, format!("{tol:e}")),
            Verdict::at_most("cb_zero", self.max_cb, 0.0, CB_TOL, "1e-9"),
        ]
    }

    pub fn quantities(&self, prefix: &str) -> Vec<Quantity> {
        vec![
            Quantity::new(format!("{prefix}.trace_route"), self.trace_route),
            Quantity::new(format!("{prefix}.kernel_route"), self.kernel_route),
            Quantity::new(format!("{prefix}.gap"), self.gap),
            Quantity::new(format!("{prefix}.max_cb"), self.max_cb),
            Quantity::new(format!("{prefix}.closed_loop_abscissa"), self.closed_loop_abscissa),
        ]
    }
}

/// Both routes over `[0, H]`. Requires `C(t)B(t) = 0` on the grid;
/// stability of `A − BC` is diagnosed and reported, not enforced.
pub fn ltv_bode_integral(sys: &LtvSystem, grid: &TimeGrid) -> Result<BodeReport> {
    let mut max_cb = 0.0_f64;
    let mut worst_t = 0.0;
    for k in 0..=grid.n_steps {
        let t = grid.time(k);
        let (b, c) = (sys.b(t), sys.c(t));
        let cb = (&c * &b).norm();
        if cb > CB_TOL * (1.0 + c.norm() * b.norm()) && cb > max_cb {
            worst_t = t;
        }
        max_cb = max_cb.max(cb);
        if sys.is_constant() {
            break;
        }
    }
    let scale = 1.0 + sys.c(worst_t).norm() * sys.b(worst_t).norm();
    if max_cb > CB_TOL * scale {
        return Err(Error::AssumptionViolated(format!(
            "C(t)B(t) must vanish; max |CB| = {max_cb:.3e} at t = {worst_t:.4}"
        )));
    }

    let closed_loop_abscissa = if sys.is_constant() {
        let lti = sys.at(0.0);
        eigenvalues(&(&lti.a - &lti.b * &lti.c)).iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max)
    } else {
        let s = sys.clone();
        let acl: MatFn = Arc::new(move |t| s.a(t) - s.b(t) * s.c(t));
        let s = sys.clone();
        let b: MatFn = Arc::new(move |t| s.b(t));
        let s = sys.clone();
        let c: MatFn = Arc::new(move |t| s.c(t));
        let cl = LtvSystem::new(acl, b, c, None)?;
        let ly = lyapunov_exponents(&cl, grid.end(), grid.dt.max(1e-3))?;
        ly.lyapunov_exponents.first().copied().unwrap_or(f64::NEG_INFINITY)
    };

    let (modal, _) = modal_form(sys)?;
    let horizon = grid.end() - grid.t0;
    let trace_route = antistable_trace_integral(&modal, horizon)?;

    let x = control_rde_x(sys, grid)?;
    let kernel: Vec<f64> = x
        .p
        .iter()
        .enumerate()
        .map(|(k, xk)| {
            let t = grid.time(k);
            let b = sys.b(t);
            ((b.transpose() * xk - sys.c(t)) * &b).trace()
        })
        .collect();
    let kernel_route = 0.5 * AveragingWindow::full(grid).trapezoid_mean(&kernel);

    Ok(BodeReport {
        trace_route,
        kernel_route,
        gap: (kernel_route - trace_route).abs(),
        max_cb,
        closed_loop_abscissa,
        closed_loop_stable: closed_loop_abscissa < 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::statespace::LtiSystem;

    fn plant(a: Mat) -> LtvSystem {
        LtvSystem::from(
            &LtiSystem::new(a, Mat::from_row_slice(2, 1, &[1.0, 1.0]), Mat::from_row_slice(1, 2, &[-2.0, 2.0]), None)
                .unwrap(),
        )
    }

    #[test]
    fn one_unstable_pole_gives_one_by_both_routes() {
        let sys = plant(Mat::from_row_slice(2, 2, &[-3.0, 0.0, 0.0, 1.0]));
        let r = ltv_bode_integral(&sys, &TimeGrid::new(10.0, 1e-3).unwrap()).unwrap();
        assert!((r.trace_route - 1.0).abs() < 1e-12);
        assert!((r.kernel_route - 1.0).abs() < 1e-3, "{}", r.kernel_route);
        assert!(r.closed_loop_stable);
    }

    #[test]
    fn stable_plant_gives_zero() {
        let sys = plant(Mat::from_row_slice(2, 2, &[-3.0, 0.0, 0.0, -1.0]));
        let r = ltv_bode_integral(&sys, &TimeGrid::new(10.0, 1e-3).unwrap()).unwrap();
        assert_eq!(r.trace_route, 0.0);
        assert!(r.kernel_route.abs() < 1e-3, "{}", r.kernel_route);
    }

    #[test]
    fn nonzero_cb_is_rejected() {
        let sys = LtvSystem::from(
            &LtiSystem::new(Mat::identity(2, 2), Mat::identity(2, 2), Mat::identity(2, 2), None).unwrap(),
        );
        let err = ltv_bode_integral(&sys, &TimeGrid::new(1.0, 1e-2).unwrap()).unwrap_err();
        assert!(matches!(err, Error::AssumptionViolated(_)));
    }
}
