//! Filtering `dx = Ax dt + √ε dw̄`, `dy = x dt + dv` with `A = diag(1, −2)`.
//! As ε → 0 the rate falls to the unstable-pole sum and the error
//! covariance collapses onto the antistable block.

use infolim::inforate::{filtering_rate, modal_form};
use infolim::linalg::{Mat, Vector};
use infolim::riccati::vanishing_noise_expansion;
use infolim::sde::{InitialState, SeedSpec, TimeGrid};
use infolim::statespace::{LtiSystem, LtvSystem};

fn main() -> infolim::Result<()> {
    let a = Mat::from_diagonal(&Vector::from_vec(vec![1.0, -2.0]));
    let sys = LtvSystem::from(&LtiSystem::new(a, Mat::identity(2, 2), Mat::identity(2, 2), None)?);
    let grid = TimeGrid::new(20.0, 1e-3)?;
    let eps = [1e-1, 1e-2, 1e-3, 1e-4, 1e-6];

    let sweep = filtering_rate(&sys, &grid, &eps, &InitialState::standard(2), 0, &SeedSpec::new(1))?;
    println!("{:>8} {:>12}", "eps", "rate");
    for (e, r) in eps.iter().zip(&sweep.deterministic) {
        println!("{e:>8.0e} {:>12.8}", r.rate);
    }
    println!("reduced limit {:.8}", sweep.limit.report.rate);

    let (modal, _) = modal_form(&sys)?;
    let x = vanishing_noise_expansion(&modal, &eps, &grid)?;
    println!("\n{:>8} {:>12} {:>12}", "eps", "|P_s|", "|P - P_u|");
    for i in 0..eps.len() {
        println!("{:>8.0e} {:>12.3e} {:>12.3e}", eps[i], x.stable_norms[i], x.block_deviation[i]);
    }
    if let Some(s) = x.stable_slope {
        println!("stable block slope in log eps: {s:.3}");
    }
    Ok(())
}
