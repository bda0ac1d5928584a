//! Kalman–Bucy filtering of the feedback and observation channels.
//!
//! Feedback channel: plant `dx = (A + BK)x dt + B dw`, observed through
//! `de = Kx dt + dw`. The plant noise is the channel noise, so the filter is
//! the correlated-noise form
//!
//! ```text
//! dx̂ = A x̂ dt + B de + P Kᵀ (de − K x̂ dt),   Ṗ = AP + PAᵀ − PKᵀKP.
//! ```
//!
//! Observation channel: `dx = A x dt + √ε B dw̄`, `dy = Cx dt + dv`, with
//! `dx̂ = A x̂ dt + P Cᵀ (dy − C x̂ dt)` and `Ṗ = AP + PAᵀ + εBBᵀ − PCᵀCP`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::riccati::{integrate_rde, RdeSolution};
use crate::sde::{SamplePath, TimeGrid};
use crate::statespace::LtvSystem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KalmanModel {
    /// Estimate `u = Kx` from `e`.
    Feedback,
    /// Estimate `z = Cx` from `y`, process noise intensity `εI`.
    Observation { epsilon: f64 },
}

/// Conditional mean and covariance at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub xhat: Vector,
    pub p: Mat,
    pub t: f64,
}

/// Path-independent part of the filter: the Riccati solution and the gains
/// `P Kᵀ` or `P Cᵀ` on the grid.
#[derive(Debug, Clone)]
pub struct FilterCovariance {
    pub model: KalmanModel,
    pub rde: RdeSolution,
    pub gains: Vec<Mat>,
}

impl FilterCovariance {
    /// Prior mean `E[u − û]²` or `E[z − ẑ]²` integrand: `tr[G P Gᵀ]`.
    pub fn mmse_integrand(&self, sys: &LtvSystem) -> Vec<f64> {
        self.rde
            .p
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let g = output_map(sys, self.model, self.rde.grid.time(k));
                (&g * p * g.transpose()).trace()
            })
            .collect()
    }
}

fn output_map(sys: &LtvSystem, model: KalmanModel, t: f64) -> Mat {
    match model {
        KalmanModel::Feedback => sys.k(t).unwrap_or_else(|| Mat::zeros(sys.input_dim(), sys.dim())),
        KalmanModel::Observation { .. } => sys.c(t),
    }
}

/// Solve the filter Riccati equation from `P(0) = p0` on `grid`.
pub fn filter_covariance(sys: &LtvSystem, model: KalmanModel, grid: &TimeGrid, p0: &Mat) -> Result<FilterCovariance> {
    let n = sys.dim();
    let a = |t: f64| sys.a(t);
    let g = |t: f64| output_map(sys, model, t);
    let rde = match model {
        KalmanModel::Feedback => {
            let q = |_t: f64| Mat::zeros(n, n);
            integrate_rde(&a, &g, &q, p0, grid)?
        }
        KalmanModel::Observation { epsilon } => {
            if !(epsilon >= 0.0) {
                return Err(Error::InvalidInput(format!("epsilon must be >= 0, got {epsilon}")));
            }
            let q = |t: f64| {
                let b = sys.b(t);
                &b * b.transpose() * epsilon
            };
            integrate_rde(&a, &g, &q, p0, grid)?
        }
    };
    let gains = rde
        .p
        .iter()
        .enumerate()
        .map(|(k, p)| p * g(grid.time(k)).transpose())
        .collect();
    Ok(FilterCovariance { model, rde, gains })
}

/// Filter output along one path.
#[derive(Debug, Clone)]
pub struct KalmanRun {
    /// `x̂(t_k)`, one column per grid point.
    pub xhat: Mat,
    /// `‖u‖²` or `‖z‖²` at `t_k`.
    pub signal_sq: Vec<f64>,
    /// `‖û‖²` or `‖ẑ‖²` at `t_k`.
    pub estimate_sq: Vec<f64>,
    /// `‖u − û‖²` or `‖z − ẑ‖²` at `t_k`.
    pub error_sq: Vec<f64>,
    /// `de − K x̂ dt` or `dy − C x̂ dt`.
    pub innovations: Mat,
}

impl KalmanRun {
    pub fn state(&self, k: usize, cov: &FilterCovariance) -> FilterState {
        FilterState {
            xhat: self.xhat.column(k).into_owned(),
            p: cov.rde.p[k].clone(),
            t: cov.rde.grid.time(k),
        }
    }
}

/// Run the filter along `path`, starting from the prior mean `x0_mean`.
pub fn kalman_bucy_run(sys: &LtvSystem, path: &SamplePath, cov: &FilterCovariance, x0_mean: &Vector) -> Result<KalmanRun> {
    let grid = &path.grid;
    let rgrid = &cov.rde.grid;
    if grid.n_steps != rgrid.n_steps || (grid.dt - rgrid.dt).abs() > 1e-15 * grid.dt.max(1.0) {
        return Err(Error::Dimension(format!(
            "path grid ({} steps, dt {}) does not match the covariance grid ({} steps, dt {})",
            grid.n_steps, grid.dt, rgrid.n_steps, rgrid.dt
        )));
    }
    let n = sys.dim();
    if path.states.nrows() != n || x0_mean.len() != n {
        return Err(Error::Dimension("path state dimension does not match the plant".into()));
    }
    let dt = grid.dt;
    let feedback = matches!(cov.model, KalmanModel::Feedback);
    let mut a = sys.a(grid.time(0));
    let mut b = sys.b(grid.time(0));
    let mut g = output_map(sys, cov.model, grid.time(0));
    let p = g.nrows();
    if path.channel.nrows() != p {
        return Err(Error::Dimension("path channel dimension does not match the filter".into()));
    }
    let mut xhat = x0_mean.clone();
    let mut out = Mat::zeros(n, grid.n_steps + 1);
    let mut innovations = Mat::zeros(p, grid.n_steps);
    let mut signal_sq = Vec::with_capacity(grid.n_steps + 1);
    let mut estimate_sq = Vec::with_capacity(grid.n_steps + 1);
    let mut error_sq = Vec::with_capacity(grid.n_steps + 1);
    let mut innov = DVector::zeros(p);
    let mut next = DVector::zeros(n);
    let mut sig = DVector::zeros(p);
    let mut est = DVector::zeros(p);
    for k in 0..=grid.n_steps {
        if !sys.is_constant() && k > 0 {
            let t = grid.time(k);
            a = sys.a(t);
            b = sys.b(t);
            g = output_map(sys, cov.model, t);
        }
        let x = path.states.column(k);
        sig.gemv(1.0, &g, &x, 0.0);
        est.gemv(1.0, &g, &xhat, 0.0);
        out.set_column(k, &xhat);
        signal_sq.push(sig.norm_squared());
        estimate_sq.push(est.norm_squared());
        error_sq.push((&sig - &est).norm_squared());
        if k == grid.n_steps {
            break;
        }
        let dz = path.channel.column(k);
        innov.copy_from(&dz);
        innov.gemv(-dt, &g, &xhat, 1.0);
        next.copy_from(&xhat);
        next.gemv(dt, &a, &xhat, 1.0);
        if feedback {
            next.gemv(1.0, &b, &dz, 1.0);
        }
        next.gemv(1.0, &cov.gains[k], &innov, 1.0);
        std::mem::swap(&mut xhat, &mut next);
        innovations.set_column(k, &innov);
    }
    Ok(KalmanRun { xhat: out, signal_sq, estimate_sq, error_sq, innovations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mean_and_std_error;
    use crate::sde::{run_paths, simulate_control_loop, simulate_observation, InitialState, SeedSpec, SimOptions};
    use crate::statespace::LtiSystem;

    fn scalar_loop(alpha: f64, k: f64) -> LtvSystem {
        let m = |v: f64| Mat::from_element(1, 1, v);
        LtvSystem::from(&LtiSystem::new(m(alpha), m(1.0), m(1.0), Some(m(-k))).unwrap())
    }

    #[test]
    fn blind_filter_propagates_the_prior_mean() {
        let a = Mat::from_row_slice(2, 2, &[-0.5, 1.0, 0.0, -1.0]);
        let sys = LtvSystem::from(&LtiSystem::new(a.clone(), Mat::identity(2, 2), Mat::zeros(1, 2), None).unwrap());
        let grid = TimeGrid::new(2.0, 1e-3).unwrap();
        let cov = filter_covariance(&sys, KalmanModel::Observation { epsilon: 1.0 }, &grid, &Mat::identity(2, 2)).unwrap();
        let x0 = InitialState::new(Vector::from_row_slice(&[1.0, 2.0]), Mat::identity(2, 2)).unwrap();
        let path = simulate_observation(&sys, 1.0, &grid, &SeedSpec::new(1), 0, &x0, &SimOptions::default()).unwrap();
        let run = kalman_bucy_run(&sys, &path, &cov, &x0.mean).unwrap();
        let mut m = x0.mean.clone();
        for _ in 0..grid.n_steps {
            m = &m + &a * &m * grid.dt;
        }
        assert!((run.xhat.column(grid.n_steps) - m).norm() < 1e-12);
    }

    #[test]
    fn grid_mismatch_is_a_dimension_error() {
        let sys = scalar_loop(1.0, 2.0);
        let g1 = TimeGrid::new(1.0, 1e-3).unwrap();
        let g2 = TimeGrid::new(2.0, 1e-3).unwrap();
        let cov = filter_covariance(&sys, KalmanModel::Feedback, &g1, &Mat::identity(1, 1)).unwrap();
        let x0 = InitialState::standard(1);
        let path = simulate_control_loop(&sys, &g2, &SeedSpec::new(1), 0, &x0, &SimOptions::default()).unwrap();
        assert!(matches!(kalman_bucy_run(&sys, &path, &cov, &x0.mean), Err(Error::Dimension(_))));
    }

    #[test]
    fn realized_feedback_error_matches_closed_form() {
        // α = 1, k = 2, p(0) = k²·Var(y0) = 1, and
        // ∫₀ᵀ p = log(p0 e^{2αT} − p0 + 2α) − log 2α
        let (alpha, k, t_end) = (1.0, 2.0, 50.0);
        let sys = scalar_loop(alpha, k);
        let grid = TimeGrid::new(t_end, 1e-3).unwrap();
        let x0 = InitialState::isotropic(1, 1.0 / (k * k)).unwrap();
        let cov = filter_covariance(&sys, KalmanModel::Feedback, &grid, &x0.cov).unwrap();
        let per_path: Vec<f64> = run_paths(1000, |i| {
            let path = simulate_control_loop(&sys, &grid, &SeedSpec::new(2024), i, &x0, &SimOptions::default()).unwrap();
            let run = kalman_bucy_run(&sys, &path, &cov, &x0.mean).unwrap();
            run.error_sq[..grid.n_steps].iter().sum::<f64>() * grid.dt / t_end
        });
        let (mean, _) = mean_and_std_error(&per_path);
        let p0 = 1.0;
        let integral = ((p0 * (2.0 * alpha * t_end).exp() - p0 + 2.0 * alpha).ln() - (2.0 * alpha).ln()) / t_end;
        assert!((mean - integral).abs() < 0.05 * integral, "{mean} vs {integral}");
    }

    #[test]
    fn steady_error_covariance_matches_are() {
        use crate::riccati::solve_are;
        let a = Mat::from_diagonal(&Vector::from_row_slice(&[1.0, -2.0]));
        let lti = LtiSystem::new(a, Mat::identity(2, 2), Mat::identity(2, 2), None).unwrap();
        let sys = LtvSystem::from(&lti);
        let eps = 0.5;
        let are = solve_are(&lti, &(Mat::identity(2, 2) * eps), &Mat::identity(2, 2)).unwrap();
        let grid = TimeGrid::new(8.0, 1e-3).unwrap();
        let x0 = InitialState::standard(2);
        let cov = filter_covariance(&sys, KalmanModel::Observation { epsilon: eps }, &grid, &x0.cov).unwrap();
        // stationary over the second half, so average over time as well
        let half = grid.n_steps / 2;
        let errs: Vec<Mat> = run_paths(1000, |i| {
            let path = simulate_observation(&sys, eps, &grid, &SeedSpec::new(9), i, &x0, &SimOptions::default()).unwrap();
            let run = kalman_bucy_run(&sys, &path, &cov, &x0.mean).unwrap();
            let mut acc = Mat::zeros(2, 2);
            for k in half..=grid.n_steps {
                let e = path.states.column(k) - run.xhat.column(k);
                acc += &e * e.transpose();
            }
            acc / (grid.n_steps - half + 1) as f64
        });
        let emp = errs.iter().fold(Mat::zeros(2, 2), |acc, m| acc + m) / errs.len() as f64;
        for i in 0..2 {
            let rel = (emp[(i, i)] - are.p[(i, i)]).abs() / are.p[(i, i)];
            assert!(rel < 0.05, "entry {i}: {} vs {}", emp[(i, i)], are.p[(i, i)]);
        }
    }
}
