//! Cubic sensor `dy = x³ dt + dv` on an Ornstein–Uhlenbeck state. The
//! grid (Kushner) filter and a bootstrap particle filter run on the same
//! path; their conditional means are printed side by side. The grid
//! filter's moments go to `$TMPDIR/nonlinear_filters.csv`.

use infolim::estimators::{kushner_grid_run, particle_filter_run, GridConfig, ParticleConfig};
use infolim::experiments::systems::cubic_sensor;
use infolim::sde::{simulate_nonlinear, SeedSpec, SimOptions, TimeGrid};

fn main() -> infolim::Result<()> {
    let sys = cubic_sensor(1.0, 1.0, 1.0, 1.0)?;
    let grid = TimeGrid::new(5.0, 1e-3)?;
    let path = simulate_nonlinear(&sys, &grid, &SeedSpec::new(5), 0, &SimOptions::default())?;

    let gf = kushner_grid_run(&sys, &path, &GridConfig { support: Some((-6.0, 6.0)), ..GridConfig::default() })?;
    let pf = particle_filter_run(&sys, &path, &ParticleConfig::new(5_000, 5))?;

    println!("{:>5} {:>9} {:>9} {:>9} {:>9}", "t", "x", "grid", "particle", "± se");
    for k in (0..=grid.n_steps).step_by(500) {
        println!(
            "{:>5.2} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            grid.time(k),
            path.states[(0, k)],
            gf.moments.mean[k],
            pf.moments.mean[k],
            pf.se_mean[k]
        );
    }
    println!("largest clipped mass {:.2e}, resamples {}", gf.max_clipped_mass, pf.resample_count);

    let out = std::env::temp_dir().join("nonlinear_filters.csv");
    std::fs::write(&out, gf.moments.to_csv(&grid, "z", None))?;
    println!("wrote {}", out.display());
    Ok(())
}
