//! Bode-type integral for a loop with `CB = 0`: the antistable trace
//! against the sensitivity kernel `(1/2H)∫tr[(BᵀX − C)B]`.

use infolim::experiments::systems::bode_pair;
use infolim::inforate::ltv_bode_integral;
use infolim::sde::TimeGrid;

fn main() -> infolim::Result<()> {
    for (label, amplitude) in [("constant", 0.0), ("periodic", 0.5)] {
        let plant = bode_pair(-3.0, 1.0, amplitude, 1.0, 2.0)?;
        let grid = TimeGrid::new(40.0 * std::f64::consts::PI, 1e-3)?;
        let r = ltv_bode_integral(&plant.sys, &grid)?;
        println!(
            "{label:<9} trace {:.6}  kernel {:.6}  gap {:.2e}  |CB| {:.1e}  closed loop stable: {}",
            r.trace_route, r.kernel_route, r.gap, r.max_cb, r.closed_loop_stable
        );
    }
    Ok(())
}
