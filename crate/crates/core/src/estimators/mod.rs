//! Causal MMSE estimators run along simulated paths.
//!
//! * [`kalman`]: Kalman–Bucy filter for linear plants, with the covariance
//!   taken from the deterministic Riccati solution.
//! * [`kushner`]: conditional density on a fixed grid for scalar nonlinear
//!   plants (pathwise exponential-likelihood correction).
//! * [`particle`]: bootstrap particle filter, the Monte Carlo cross-check
//!   of the grid filter.
//!
//! All three report, per grid time `t_k`, the conditional moments given the
//! channel output over `[0, t_k)`.

pub mod kalman;
pub mod kushner;
pub mod particle;

pub use kalman::{filter_covariance, kalman_bucy_run, FilterCovariance, FilterState, KalmanModel, KalmanRun};
pub use kushner::{kushner_grid_run, ConditionalDensityGrid, GridConfig, GridRun};
pub use particle::{particle_filter_run, ParticleConfig, ParticleEnsemble, ParticleRun};

/// Conditional moments of the state and of the channel map `g` (`u` or `z`)
/// along one path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConditionalMoments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `π(g)`.
    pub g: Vec<f64>,
    /// `π(g²)`.
    pub g2: Vec<f64>,
}

impl ConditionalMoments {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            mean: Vec::with_capacity(n),
            variance: Vec::with_capacity(n),
            g: Vec::with_capacity(n),
            g2: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `π(g²) − π(g)²` at step `k`.
    pub fn g_variance(&self, k: usize) -> f64 {
        (self.g2[k] - self.g[k] * self.g[k]).max(0.0)
    }

    /// CSV `t, pi_u, pi_u2` (or `pi_z`, …) plus optional ESS.
    pub fn to_csv(&self, grid: &crate::sde::TimeGrid, g_name: &str, ess: Option<&[f64]>) -> String {
        use std::fmt::Write as _;
        let mut out = format!("t,mean,variance,pi_{g_name},pi_{g_name}2");
        if ess.is_some() {
            out.push_str(",ess");
        }
        out.push('\n');
        for k in 0..self.len() {
            write!(
                out,
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                grid.time(k),
                self.mean[k],
                self.variance[k],
                self.g[k],
                self.g2[k]
            )
            .unwrap();
            if let Some(e) = ess {
                write!(out, ",{:.12e}", e[k]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}
