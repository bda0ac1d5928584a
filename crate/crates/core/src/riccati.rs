//! Riccati differential equations `Ṗ = AP + PAᵀ + Q − PGᵀGP`, their steady
//! states, the backward control RDE used by the Bode-type integral, and the
//! vanishing-noise expansion of the filtering RDE.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{min_sym_eigenvalue, spd_inverse, symmetrize, Mat};
use crate::sde::TimeGrid;
use crate::statespace::{LtiSystem, LtvSystem};

/// `‖Ṗ‖_F` below which a solution counts as steady.
pub const RDE_STEADY_TOL: f64 = 1e-8;
/// Smallest eigenvalue tolerated before declaring a PSD breakdown.
pub const PSD_TOL: f64 = -1e-9;

pub type MatField<'a> = &'a (dyn Fn(f64) -> Mat + Sync);

/// Covariances on a grid.
#[derive(Debug, Clone)]
pub struct RdeSolution {
    pub grid: TimeGrid,
    /// `P(t_k)`, `k = 0..=n_steps`.
    pub p: Vec<Mat>,
    pub min_eig: Vec<f64>,
    /// Largest `‖Ṗ‖_F` over the last 5% of the grid.
    pub trailing_rate: f64,
    pub converged: bool,
    pub steady_state: Option<Mat>,
}

impl RdeSolution {
    pub fn last(&self) -> &Mat {
        self.p.last().expect("solution has at least one point")
    }

    pub fn traces(&self) -> Vec<f64> {
        self.p.iter().map(|p| p.trace()).collect()
    }

    /// CSV with columns `t, p_ij (row-major), trace, min_eig`.
    pub fn to_csv(&self) -> String {
        let n = self.p[0].nrows();
        let mut out = String::from("t");
        for i in 1..=n {
            for j in 1..=n {
                write!(out, ",p_{i}{j}").unwrap();
            }
        }
        out.push_str(",trace,min_eig\n");
        for (k, p) in self.p.iter().enumerate() {
            write!(out, "{:.12e}", self.grid.time(k)).unwrap();
            for i in 0..n {
                for j in 0..n {
                    write!(out, ",{:.12e}", p[(i, j)]).unwrap();
                }
            }
            writeln!(out, ",{:.12e},{:.12e}", p.trace(), self.min_eig[k]).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn rde_field(a: &Mat, g: &Mat, q: &Mat, p: &Mat) -> Mat {
    let ap = a * p;
    let gp = g * p;
    &ap + ap.transpose() + q - gp.transpose() * gp
}

/// RK4 integration of `Ṗ = AP + PAᵀ + Q − PGᵀGP` with symmetrization after
/// every step.
pub fn integrate_rde(a: MatField, g: MatField, q: MatField, p0: &Mat, grid: &TimeGrid) -> Result<RdeSolution> {
    let n = p0.nrows();
    if p0.ncols() != n || a(grid.t0).nrows() != n || g(grid.t0).ncols() != n {
        return Err(Error::Dimension("RDE operands do not match P0".into()));
    }
    let mut p = p0.clone();
    symmetrize(&mut p);
    let lam0 = min_sym_eigenvalue(&p);
    if lam0 < PSD_TOL {
        return Err(Error::InvalidInput(format!("P0 is not PSD (min eigenvalue {lam0:.3e})")));
    }
    let h = grid.dt;
    let tail_start = grid.n_steps - ((0.05 * grid.n_steps as f64).ceil() as usize).min(grid.n_steps);
    let mut out = Vec::with_capacity(grid.n_steps + 1);
    let mut min_eig = Vec::with_capacity(grid.n_steps + 1);
    out.push(p.clone());
    min_eig.push(lam0);
    let mut trailing: f64 = 0.0;
    for k in 0..grid.n_steps {
        let t = grid.time(k);
        let (a0, g0, q0) = (a(t), g(t), q(t));
        let (am, gm, qm) = (a(t + 0.5 * h), g(t + 0.5 * h), q(t + 0.5 * h));
        let (a1, g1, q1) = (a(t + h), g(t + h), q(t + h));
        let k1 = rde_field(&a0, &g0, &q0, &p);
        if k >= tail_start {
            trailing = trailing.max(k1.norm());
        }
        let k2 = rde_field(&am, &gm, &qm, &(&p + &k1 * (0.5 * h)));
        let k3 = rde_field(&am, &gm, &qm, &(&p + &k2 * (0.5 * h)));
        let k4 = rde_field(&a1, &g1, &q1, &(&p + &k3 * h));
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        symmetrize(&mut p);
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalBreakdown { step: k + 1, reason: "non-finite covariance".into() });
        }
        let lam = min_sym_eigenvalue(&p);
        if lam < PSD_TOL * (1.0 + p.norm()) {
            return Err(Error::NumericalBreakdown {
                step: k + 1,
                reason: format!("covariance lost positive semidefiniteness (min eigenvalue {lam:.3e})"),
            });
        }
        out.push(p.clone());
        min_eig.push(lam);
    }
    let t_end = grid.end();
    let final_rate = rde_field(&a(t_end), &g(t_end), &q(t_end), &p).norm();
    trailing = trailing.max(final_rate);
    let converged = trailing < RDE_STEADY_TOL;
    Ok(RdeSolution {
        grid: *grid,
        steady_state: converged.then(|| p.clone()),
        p: out,
        min_eig,
        trailing_rate: trailing,
        converged,
    })
}

/// Steady covariance of the filtering ARE.
#[derive(Debug, Clone)]
pub struct AreSolution {
    pub p: Mat,
    /// `‖AP + PAᵀ + BΣ_wBᵀ − PCᵀΣ_v⁻¹CP‖_F`.
    pub residual: f64,
    pub route: &'static str,
    /// Time the RDE ran before reaching the steady state.
    pub settle_time: f64,
}

/// Longest time [`solve_are`] integrates before giving up.
pub const ARE_MAX_HORIZON: f64 = 200.0;

/// Solve `0 = AP + PAᵀ + BΣ_wBᵀ − PCᵀΣ_v⁻¹CP` by integrating the RDE from
/// `P0 = I` until it stops moving.
pub fn solve_are(sys: &LtiSystem, sigma_w: &Mat, sigma_v: &Mat) -> Result<AreSolution> {
    let n = sys.dim();
    if sigma_w.nrows() != sys.b.ncols() || sigma_v.nrows() != sys.c.nrows() {
        return Err(Error::Dimension("noise intensities do not match B and C".into()));
    }
    let (sv_inv, _) = spd_inverse(sigma_v)
        .ok_or_else(|| Error::InvalidInput("observation noise intensity must be positive definite".into()))?;
    let q = &sys.b * sigma_w * sys.b.transpose();
    let r = sys.c.transpose() * &sv_inv * &sys.c;
    let a = sys.a.clone();
    let field = |p: &Mat| {
        let ap = &a * p;
        &ap + ap.transpose() + &q - p * &r * p
    };
    let mut p = Mat::identity(n, n);
    let scale = 1.0 + a.norm() + r.norm() + q.norm().sqrt();
    let h = (0.05 / scale).min(1e-2);
    let mut t = 0.0;
    loop {
        let f = field(&p);
        let res = f.norm();
        if res < 1e-11 * (1.0 + p.norm()) {
            return Ok(AreSolution { p, residual: res, route: "rde-to-steady-state", settle_time: t });
        }
        if t >= ARE_MAX_HORIZON || !res.is_finite() {
            return Err(Error::NotConverged { horizon: ARE_MAX_HORIZON, trailing: res });
        }
        // fixed points of the RK4 map are exact zeros of the field
        let k1 = f;
        let k2 = field(&(&p + &k1 * (0.5 * h)));
        let k3 = field(&(&p + &k2 * (0.5 * h)));
        let k4 = field(&(&p + &k3 * h));
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        symmetrize(&mut p);
        t += h;
    }
}

/// Backward control RDE `−Ẋ = AᵀX + XA − XBBᵀX` returned in forward time
/// on `grid`.
///
/// The equation is run backward from a positive definite terminal value
/// `X = I` placed one horizon past the end of `grid`, so on `grid` the
/// solution has settled onto the stabilizing branch (`A − BBᵀX` stable).
/// From a zero terminal value the equation never leaves `X ≡ 0`.
pub fn control_rde_x(sys: &LtvSystem, grid: &TimeGrid) -> Result<RdeSolution> {
    let n = sys.dim();
    let settle = grid.end() - grid.t0;
    let t_final = grid.end() + settle;
    let ext = TimeGrid { t0: 0.0, horizon: t_final - grid.t0, dt: grid.dt, n_steps: 2 * grid.n_steps };
    let a = |s: f64| sys.a(t_final - s).transpose();
    let g = |s: f64| sys.b(t_final - s).transpose();
    let q = |_s: f64| Mat::zeros(n, n);
    let back = integrate_rde(&a, &g, &q, &Mat::identity(n, n), &ext)?;
    // forward index k on `grid` is backward index 2N − k
    let total = ext.n_steps;
    let p: Vec<Mat> = (0..=grid.n_steps).map(|k| back.p[total - k].clone()).collect();
    let min_eig: Vec<f64> = (0..=grid.n_steps).map(|k| back.min_eig[total - k]).collect();
    // steadiness measured at the start of the forward window
    let x0 = &p[0];
    let t0 = grid.t0;
    let a0 = sys.a(t0);
    let bt = sys.b(t0).transpose();
    let rate = rde_field(&a0.transpose(), &bt, &Mat::zeros(n, n), x0).norm();
    let converged = rate < RDE_STEADY_TOL;
    Ok(RdeSolution {
        grid: *grid,
        steady_state: converged.then(|| x0.clone()),
        p,
        min_eig,
        trailing_rate: rate,
        converged,
    })
}

/// Per-step check of `tr[P^{1/2}KᵀKP^{1/2}] = 2 tr A − tr[ṖP⁻¹]` along a
/// solution of `Ṗ = AP + PAᵀ − PKᵀKP`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceIdentityCheck {
    /// Largest `|lhs − rhs| / (1 + |tr A|)`.
    pub max_relative_residual: f64,
    /// Steps skipped because `P` was too ill-conditioned to invert.
    pub skipped_steps: usize,
    pub checked_steps: usize,
}

/// Condition number beyond which `P⁻¹` is not trusted.
pub const TRACE_IDENTITY_MAX_COND: f64 = 1e12;

pub fn trace_identity_check(a: MatField, k: MatField, sol: &RdeSolution) -> TraceIdentityCheck {
    let mut worst: f64 = 0.0;
    let (mut skipped, mut checked) = (0, 0);
    for (i, p) in sol.p.iter().enumerate() {
        let t = sol.grid.time(i);
        let (at, kt) = (a(t), k(t));
        let n = p.nrows();
        let pdot = rde_field(&at, &kt, &Mat::zeros(n, n), p);
        let Some((p_inv, cond)) = spd_inverse(p) else {
            skipped += 1;
            continue;
        };
        if cond > TRACE_IDENTITY_MAX_COND {
            skipped += 1;
            continue;
        }
        let lhs = (&kt * p * kt.transpose()).trace();
        let rhs = 2.0 * at.trace() - (pdot * p_inv).trace();
        worst = worst.max((lhs - rhs).abs() / (1.0 + at.trace().abs()));
        checked += 1;
    }
    TraceIdentityCheck { max_relative_residual: worst, skipped_steps: skipped, checked_steps: checked }
}

/// Full and reduced solutions of the filtering RDE under vanishing process
/// noise `ε²BBᵀ`, for a modal-form system.
#[derive(Debug, Clone)]
pub struct ExpansionReport {
    pub epsilons: Vec<f64>,
    pub solutions: Vec<RdeSolution>,
    /// `‖P_s‖_F` at the end of the grid, per ε.
    pub stable_norms: Vec<f64>,
    /// `‖P_0‖_F` (off-diagonal block) at the end of the grid, per ε.
    pub offdiag_norms: Vec<f64>,
    /// Log-log slope of `‖P_s‖` against ε.
    pub stable_slope: Option<f64>,
    /// Log-log slope of `‖P_0‖`; `None` when the block vanishes identically.
    pub offdiag_slope: Option<f64>,
    /// Solution of `Ṗ_u = A_uP_u + P_uA_uᵀ − P_uC_uᵀC_uP_u`.
    pub reduced: RdeSolution,
    /// `‖P − diag(0, P_u)‖_F` at the end of the grid, per ε.
    pub block_deviation: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Accepted range of the stable-block slope.
pub const EXPANSION_SLOPE_RANGE: (f64, f64) = (1.7, 2.3);

fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 1e-300)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

pub fn vanishing_noise_expansion(sys: &LtvSystem, epsilons: &[f64], grid: &TimeGrid) -> Result<ExpansionReport> {
    let s = sys
        .modal_split()
        .ok_or_else(|| Error::InvalidInput("vanishing-noise expansion needs a modal-form system".into()))?;
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidInput("epsilons must be positive".into()));
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("epsilons must be strictly descending".into()));
    }
    let n = sys.dim();
    let u = n - s;
    let a = |t: f64| sys.a(t);
    let g = |t: f64| sys.c(t);
    let solutions: Vec<RdeSolution> = epsilons
        .par_iter()
        .map(|&eps| {
            let q = move |t: f64| {
                let b = sys.b(t);
                &b * b.transpose() * (eps * eps)
            };
            integrate_rde(&a, &g, &q, &Mat::identity(n, n), grid)
        })
        .collect::<Result<_>>()?;
    let a_u = |t: f64| sys.a(t).view((s, s), (u, u)).into_owned();
    let c_u = |t: f64| sys.c(t).columns(s, u).into_owned();
    let zero = |_t: f64| Mat::zeros(u, u);
    let reduced = integrate_rde(&a_u, &c_u, &zero, &Mat::identity(u, u), grid)?;
    let p_u = reduced.last().clone();
    let mut stable_norms = Vec::new();
    let mut offdiag_norms = Vec::new();
    let mut block_deviation = Vec::new();
    for sol in &solutions {
        let p = sol.last();
        stable_norms.push(p.view((0, 0), (s, s)).norm());
        offdiag_norms.push(p.view((0, s), (s, u)).norm());
        let mut target = Mat::zeros(n, n);
        target.view_mut((s, s), (u, u)).copy_from(&p_u);
        block_deviation.push((p - target).norm());
    }
    let stable_slope = if s == 0 { None } else { loglog_slope(epsilons, &stable_norms) };
    let offdiag_slope = if offdiag_norms.iter().all(|v| *v < 1e-300) {
        None
    } else {
        loglog_slope(epsilons, &offdiag_norms)
    };
    let mut warnings = Vec::new();
    if let Some(slope) = stable_slope {
        if !(EXPANSION_SLOPE_RANGE.0..=EXPANSION_SLOPE_RANGE.1).contains(&slope) {
            warnings.push(format!(
                "ExpansionMismatch: stable-block slope {slope:.4} outside [{}, {}]",
                EXPANSION_SLOPE_RANGE.0, EXPANSION_SLOPE_RANGE.1
            ));
        }
    }
    Ok(ExpansionReport {
        epsilons: epsilons.to_vec(),
        solutions,
        stable_norms,
        offdiag_norms,
        stable_slope,
        offdiag_slope,
        reduced,
        block_deviation,
        warnings,
    })
}
