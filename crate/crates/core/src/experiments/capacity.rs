//! Capacity sandwiches on the feedback and observation channels.

use super::filtering::unstable_diagonal_plant;
use super::linear::route_equivalence;
use super::systems::{self, Plant};
use super::{stride_for, Run};
use crate::error::Result;
use crate::inforate::{
    capacity_check, control_rate_monte_carlo, control_rate_riccati, filtering_rate_deterministic,
    filtering_rate_monte_carlo, CapacityBounds, ChannelKind, DuncanMc, PowerProfile,
};
use crate::sde::TimeGrid;

fn record(run: &mut Run, mc: &DuncanMc, bounds: &CapacityBounds, grid: &TimeGrid) {
    let name = bounds.kind.signal_name();
    run.checks("", bounds.verdicts.iter().cloned());
    run.checks("monte_carlo", mc.identity_verdicts(""));
    run.quantities(bounds.quantities(&format!("capacity_{name}")));
    run.quantities(mc.quantities("monte_carlo"));
    run.series("monte_carlo_profiles", mc.profiles_csv(name, stride_for(grid, 2000)));
}

pub(crate) fn capacity_thm34(run: &mut Run) -> Result<()> {
    let (alpha, k) = (run.cfg.alpha.unwrap_or(1.0), run.cfg.k.unwrap_or(2.0));
    let plant = run.plant(|| systems::scalar_loop(alpha, k, 1.0).map(Plant::Linear))?.linear("capacity_thm34")?;
    let grid = run.grid((20.0, 1e-3))?;
    let mc = control_rate_monte_carlo(&plant.sys, &grid, &plant.x0, run.n_paths(1000), &run.seed())?;
    let ric = control_rate_riccati(&plant.sys, &grid, &plant.x0.cov)?;
    run.check(route_equivalence("monte_carlo.rate_eq_riccati", &mc, ric.report.rate));
    let bounds = capacity_check(&mc, &PowerProfile::SupOfEmpirical, ChannelKind::Feedback)?;
    record(run, &mc, &bounds, &grid);
    Ok(())
}

pub(crate) fn capacity_thm43(run: &mut Run) -> Result<()> {
    let plant = run.plant(|| unstable_diagonal_plant().map(Plant::Linear))?.linear("capacity_thm43")?;
    let eps = run.epsilons(&[1e-2])[0];
    let grid = run.grid((10.0, 1e-3))?;
    let mc = filtering_rate_monte_carlo(&plant.sys, &grid, eps, &plant.x0, run.n_paths(500), &run.seed())?;
    let det = filtering_rate_deterministic(&plant.sys, &grid, eps, &plant.x0.cov)?;
    run.check(route_equivalence("monte_carlo.rate_eq_deterministic", &mc, det.rate));
    run.quantity("epsilon", eps);
    let bounds = capacity_check(&mc, &PowerProfile::SupOfEmpirical, ChannelKind::Filtering)?;
    record(run, &mc, &bounds, &grid);
    Ok(())
}
