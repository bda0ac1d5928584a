//! Observation-channel experiments on linear plants.

use std::f64::consts::PI;
use std::fmt::Write as _;

use super::linear::{deterministic_grid, rde_csv, route_equivalence};
use super::systems::{self, LinearPlant, Plant};
use super::{stride_for, Run};
use crate::error::Result;
use crate::inforate::{
    antistable_spectrum, filtering_rate, filtering_rate_deterministic, filtering_rate_monte_carlo, modal_form,
    rate_bounds_verdicts, FilteringSweep, Verdict, SIGMA_MULTIPLIER,
};
use crate::linalg::{Mat, Vector};
use crate::riccati::{vanishing_noise_expansion, EXPANSION_SLOPE_RANGE};
use crate::sde::InitialState;
use crate::statespace::{LtiSystem, LtvSystem};

const DEFAULT_EPSILONS: [f64; 3] = [1e-2, 1e-4, 1e-6];

/// `A = diag(1, −2)`, `B = C = I`.
pub(crate) fn unstable_diagonal_plant() -> Result<LinearPlant> {
    let a = Mat::from_diagonal(&Vector::from_vec(vec![1.0, -2.0]));
    let sys = LtvSystem::from(&LtiSystem::new(a, Mat::identity(2, 2), Mat::identity(2, 2), None)?);
    Ok(LinearPlant { sys, x0: InitialState::standard(2) })
}

fn sweep_csv(sweep: &FilteringSweep) -> String {
    let mut out = String::from("epsilon,rate_deterministic,rate_monte_carlo,rate_monte_carlo_se\n");
    for (i, eps) in sweep.epsilons.iter().enumerate() {
        let (mc, se) = sweep.monte_carlo[i]
            .as_ref()
            .map(|m| (format!("{:.12e}", m.report.rate), format!("{:.12e}", m.report.mc_std_error.unwrap_or(0.0))))
            .unwrap_or_default();
        writeln!(out, "{eps:.6e},{:.12e},{mc},{se}", sweep.deterministic[i].rate).unwrap();
    }
    out
}

pub(crate) fn filt_prop45(run: &mut Run) -> Result<()> {
    let plant = run.plant(|| unstable_diagonal_plant().map(Plant::Linear))?.linear("filt_prop45")?;
    let eps = run.epsilons(&DEFAULT_EPSILONS);
    let grid = run.grid((10.0, 1e-3))?;
    let sweep = filtering_rate(&plant.sys, &grid, &eps, &plant.x0, run.n_paths(200), &run.seed())?;
    let smallest = *eps.last().expect("epsilons are non-empty");
    let r_min = sweep.deterministic.last().expect("one rate per epsilon").rate;
    if let Some(pole_sum) = sweep.pole_sum {
        run.check(Verdict::equal(format!("rate_eq_pole_sum[eps={smallest:e}]"), r_min, pole_sum, 1e-3, "1e-3"));
        run.check(Verdict::equal("vanishing_noise_limit_eq_pole_sum", sweep.limit.report.rate, pole_sum, 1e-4, "1e-4"));
        run.quantity("unstable_pole_sum", pole_sum);
    }
    run.checks("", sweep.monotonicity_verdicts());
    for (e, (det, mc)) in eps.iter().zip(sweep.deterministic.iter().zip(&sweep.monte_carlo)) {
        run.quantities(det.quantities(&format!("deterministic[eps={e:e}]")));
        if let Some(mc) = mc {
            let p = format!("monte_carlo[eps={e:e}]");
            run.check(route_equivalence(&format!("{p}.rate_eq_deterministic"), mc, det.rate));
            run.checks(&p, mc.identity_verdicts(""));
            run.quantities(mc.quantities(&p));
        }
    }
    run.quantity("vanishing_noise_limit", sweep.limit.report.rate);
    if let Some(x) = sweep.extrapolated {
        run.quantity("extrapolated_limit", x);
    }
    run.series("epsilon_sweep", sweep_csv(&sweep));
    if let Some(Some(mc)) = sweep.monte_carlo.last() {
        run.series("monte_carlo_profiles", mc.profiles_csv("z", stride_for(&grid, 2000)));
    }
    Ok(())
}

pub(crate) fn filt_lemma46_expansion(run: &mut Run) -> Result<()> {
    let plant = run.plant(|| unstable_diagonal_plant().map(Plant::Linear))?.linear("filt_lemma46_expansion")?;
    let (modal, _) = modal_form(&plant.sys)?;
    let eps = run.epsilons(&DEFAULT_EPSILONS);
    let grid = run.grid((20.0, 1e-3))?;
    let rep = vanishing_noise_expansion(&modal, &eps, &grid)?;
    let p_u = rep.reduced.last().norm();
    let last = rep.block_deviation.len() - 1;
    run.check(Verdict::at_most(
        format!("block_deviation[eps={:e}]", eps[last]),
        rep.block_deviation[last],
        0.0,
        1e-3 * (1.0 + p_u),
        "1e-3(1+|P_u|)",
    ));
    match rep.stable_slope {
        Some(s) => {
            run.check(Verdict::at_least("stable_block_slope_lower", s, EXPANSION_SLOPE_RANGE.0, 0.0, "range"));
            run.check(Verdict::at_most("stable_block_slope_upper", s, EXPANSION_SLOPE_RANGE.1, 0.0, "range"));
        }
        None => run.note("no stable block: slope not defined"),
    }
    run.quantity("reduced_norm", p_u);
    if let Some(s) = rep.offdiag_slope {
        run.quantity("offdiagonal_slope", s);
    }
    let mut csv = String::from("epsilon,stable_norm,offdiagonal_norm,block_deviation\n");
    for i in 0..eps.len() {
        writeln!(csv, "{:.6e},{:.12e},{:.12e},{:.12e}", eps[i], rep.stable_norms[i], rep.offdiag_norms[i], rep.block_deviation[i])
            .unwrap();
        run.quantity(format!("stable_norm[eps={:e}]", eps[i]), rep.stable_norms[i]);
        run.quantity(format!("block_deviation[eps={:e}]", eps[i]), rep.block_deviation[i]);
    }
    run.series("expansion", csv);
    run.series("reduced_covariance", rde_csv(&rep.reduced, stride_for(&grid, 2000)));
    for w in &rep.warnings {
        run.note(w.clone());
    }
    Ok(())
}

pub(crate) fn filt_prop48(run: &mut Run) -> Result<()> {
    let plant = run
        .plant(|| systems::periodic_observed(1.0, 0.5, 1.0, -1.0).map(Plant::Linear))?
        .linear("filt_prop48")?;
    let sys = &plant.sys;
    let eps = run.epsilons(&DEFAULT_EPSILONS);
    let det = deterministic_grid(&plant, 50.0, 1e-3)?;
    let seed = run.seed();
    let sweep = filtering_rate(sys, &det, &eps, &plant.x0, 0, &seed)?;
    let spectrum = antistable_spectrum(sys, &det)?;
    let smallest = *eps.last().expect("epsilons are non-empty");
    let r_min = sweep.deterministic.last().expect("one rate per epsilon").rate;
    let limit = &sweep.limit;
    run.check(Verdict::equal(format!("rate_eq_reduced_limit[eps={smallest:e}]"), r_min, limit.report.rate, 1e-3, "1e-3"));
    run.check(Verdict::at_most("limit.log_det_identity_residual", limit.identity_residual, 0.0, 1e-6, "1e-6"));
    run.checks("", sweep.monotonicity_verdicts());
    run.checks("limit", rate_bounds_verdicts(limit, &spectrum));
    for (e, r) in eps.iter().zip(&sweep.deterministic) {
        run.quantities(r.quantities(&format!("deterministic[eps={e:e}]")));
    }
    run.quantities(limit.report.quantities("limit"));
    run.quantity("limit.trace_average", limit.trace_average);
    run.quantity("limit.log_det_sup", limit.log_det_sup);
    run.quantity("limit.log_det_inf", limit.log_det_inf);
    run.quantity("spectral_lower", spectrum.lower_sum);
    run.quantity("spectral_upper", spectrum.upper_sum);
    run.series("epsilon_sweep", sweep_csv(&sweep));
    if let Some(rde) = &limit.rde {
        run.series("reduced_covariance", rde_csv(rde, stride_for(&det, 2000)));
    }

    let mc_eps = eps[0];
    let grid = run.grid((4.0 * PI, 2e-3))?;
    let mc = filtering_rate_monte_carlo(sys, &grid, mc_eps, &plant.x0, run.n_paths(200), &seed)?;
    let det_mc = filtering_rate_deterministic(sys, &grid, mc_eps, &plant.x0.cov)?;
    let p = format!("monte_carlo[eps={mc_eps:e}]");
    let se = mc.report.mc_std_error.unwrap_or(0.0);
    run.check(route_equivalence(&format!("{p}.rate_eq_deterministic"), &mc, det_mc.rate));
    run.check(Verdict::at_least(format!("{p}.rate_ge_limit"), mc.report.rate, limit.report.rate, SIGMA_MULTIPLIER * se, "4σ"));
    run.checks(&p, mc.identity_verdicts(""));
    run.quantities(mc.quantities(&p));
    Ok(())
}
