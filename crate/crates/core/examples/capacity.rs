//! Feedback capacity sandwich `C_f ≥ D̄_cond = rate + D̄_marg ≥ rate` for
//! the scalar loop, with `C_f = ½ sup_t E u²`.

use infolim::experiments::systems::scalar_loop;
use infolim::inforate::{capacity_check, control_rate_monte_carlo, ChannelKind, PowerProfile};
use infolim::sde::{SeedSpec, TimeGrid};

fn main() -> infolim::Result<()> {
    let plant = scalar_loop(1.0, 2.0, 1.0)?;
    let grid = TimeGrid::new(20.0, 1e-3)?;
    let mc = control_rate_monte_carlo(&plant.sys, &grid, &plant.x0, 300, &SeedSpec::new(2))?;
    let cap = capacity_check(&mc, &PowerProfile::SupOfEmpirical, ChannelKind::Feedback)?;

    println!("C_f     {:.4}", cap.c_f);
    println!("D_cond  {:.4} ± {:.4}", cap.divergence_conditional.mean, cap.divergence_conditional.std_error);
    println!("rate    {:.4} ± {:.4}", cap.rate.mean, cap.rate.std_error);
    println!("D_marg  {:.4} ± {:.4}", cap.divergence_marginal.mean, cap.divergence_marginal.std_error);
    for v in &cap.verdicts {
        println!("  {v}");
    }
    Ok(())
}
