//! A periodic loop `A = diag(−1, 1 + 0.5 sin t)`: Lyapunov exponents, the
//! dichotomy spectrum of the antistable block, and the chain
//! `Σλ̲ ≤ ⟨tr A_u⟩ ≤ rate ≤ Σλ̄ − inf ½tr(ṖP⁻¹)`.

use std::f64::consts::PI;

use infolim::experiments::systems::periodic_loop;
use infolim::inforate::ltv_rate_bounds_check;
use infolim::sde::{SeedSpec, TimeGrid};
use infolim::statespace::lyapunov_exponents;

fn main() -> infolim::Result<()> {
    let plant = periodic_loop(1.0, 0.5, 1.0, -1.0, 1.0)?;
    let horizon = 20.0 * PI;

    let open = lyapunov_exponents(&plant.sys, horizon, 1e-3)?;
    println!("open-loop Lyapunov exponents {:?}", open.lyapunov_exponents);

    let grid = TimeGrid::new(horizon, 1e-3)?;
    let r = ltv_rate_bounds_check(&plant.sys, &grid, &plant.x0, 100, &SeedSpec::new(3))?;
    for i in &r.spectrum.intervals {
        println!("spectral interval [{:.4}, {:.4}]", i.lower, i.upper);
    }
    println!("riccati rate      {:.5}", r.riccati.report.rate);
    println!("trace average     {:.5}", r.riccati.trace_average);
    if let Some(mc) = &r.monte_carlo {
        println!("monte carlo rate  {:.5} ± {:.5}", mc.report.rate, mc.report.mc_std_error.unwrap_or(0.0));
    }
    for v in &r.verdicts {
        println!("  {v}");
    }
    Ok(())
}
