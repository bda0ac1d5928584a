//! Kalman–Bucy filter on one simulated observation path, and its realized
//! error against the Riccati covariance.

use infolim::estimators::{filter_covariance, kalman_bucy_run, KalmanModel};
use infolim::linalg::{Mat, Vector};
use infolim::sde::{simulate_observation, InitialState, SeedSpec, SimOptions, TimeGrid};
use infolim::statespace::{LtiSystem, LtvSystem};

fn main() -> infolim::Result<()> {
    // damped oscillator observed in position only
    let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.2]);
    let b = Mat::identity(2, 2);
    let c = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
    let sys = LtvSystem::from(&LtiSystem::new(a, b, c, None)?);
    let eps = 0.1;
    let grid = TimeGrid::new(20.0, 1e-3)?;
    let x0 = InitialState::standard(2);

    let cov = filter_covariance(&sys, KalmanModel::Observation { epsilon: eps }, &grid, &x0.cov)?;
    let mut sq_err = vec![0.0; grid.n_steps + 1];
    let n_paths = 50;
    for i in 0..n_paths {
        let path = simulate_observation(&sys, eps, &grid, &SeedSpec::new(11), i, &x0, &SimOptions::default())?;
        let kb = kalman_bucy_run(&sys, &path, &cov, &Vector::zeros(2))?;
        for (k, e) in kb.error_sq.iter().enumerate() {
            sq_err[k] += e / n_paths as f64;
        }
    }

    println!("{:>6} {:>14} {:>14}", "t", "E|z − ẑ|²", "C P Cᵀ");
    let mmse = cov.mmse_integrand(&sys);
    for k in (0..=grid.n_steps).step_by(2000) {
        println!("{:>6.1} {:>14.5} {:>14.5}", grid.time(k), sq_err[k], mmse[k]);
    }
    Ok(())
}
