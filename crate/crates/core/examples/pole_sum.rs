//! Feedback rate of multi-state LTI loops equals the sum of open-loop
//! unstable poles, whatever the stabilizing gain.

use infolim::experiments::systems::{diagonal_poles, prop36_systems};
use infolim::inforate::control_rate_riccati;
use infolim::sde::TimeGrid;
use infolim::statespace::{modal_decompose, unstable_pole_sum};

fn main() -> infolim::Result<()> {
    let grid = TimeGrid::new(40.0, 1e-3)?;
    let mut plants = prop36_systems()?;
    plants.push(("poles_0.7_0.3_m4".into(), diagonal_poles(&[0.7, 0.3, -4.0])?));

    println!("{:<20} {:>10} {:>10} {:>6}", "system", "pole sum", "riccati", "n_u");
    for (name, plant) in &plants {
        let lti = plant.sys.at(0.0);
        let poles = unstable_pole_sum(&lti)?;
        let modal = modal_decompose(&lti)?;
        let rate = control_rate_riccati(&plant.sys, &grid, &plant.x0.cov)?;
        println!("{name:<20} {:>10.5} {:>10.5} {:>6}", poles.unstable_sum, rate.report.rate, modal.n_u());
    }
    Ok(())
}
