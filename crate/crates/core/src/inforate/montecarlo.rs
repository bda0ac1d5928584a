//! Path-ensemble aggregation of the Duncan integrands.
//!
//! Paths are processed in fixed batches; each batch runs in parallel and is
//! folded into the running sums in path-index order, so results do not
//! depend on the number of worker threads.

use rayon::prelude::*;

use super::{AveragingWindow, Estimate, InfoReport, RateRoute, Verdict, SIGMA_MULTIPLIER};
use crate::error::{Error, Result};
use crate::sde::TimeGrid;

const BATCH: usize = 64;
/// Largest tolerated fraction of failed paths.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// Per-time integrands of one path, each of length `n_steps + 1`.
#[derive(Debug, Clone, Default)]
pub struct PathIntegrands {
    /// `‖u‖²` (or `‖z‖²`).
    pub signal: Vec<f64>,
    /// `‖û‖²`.
    pub estimate: Vec<f64>,
    /// `‖u − û‖²`.
    pub error: Vec<f64>,
    /// `E[‖u‖² | past] − ‖û‖²`, when the filter provides it.
    pub conditional_variance: Option<Vec<f64>>,
    /// `‖x‖²`.
    pub state_sq: Vec<f64>,
}

/// Window averages of one path, each already halved (nats per unit time).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSummary {
    /// `½⟨‖u − û‖²⟩`.
    pub error: f64,
    /// `½⟨‖u‖² − ‖û‖²⟩`.
    pub difference: f64,
    pub conditional_variance: Option<f64>,
    /// `½⟨‖u‖²⟩`, the conditional divergence rate.
    pub signal: f64,
    /// `½⟨‖û‖²⟩`, the marginal divergence rate.
    pub estimate: f64,
    /// `½∫₀ᴴ ‖u − û‖²`.
    pub total: f64,
    /// `½` of the `[0, H]` average of `‖u − û‖²`.
    pub horizon_error: f64,
}

/// Ensemble means over paths at every grid time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Profiles {
    pub signal: Vec<f64>,
    pub estimate: Vec<f64>,
    pub error: Vec<f64>,
    pub conditional_variance: Option<Vec<f64>>,
    pub state_sq: Vec<f64>,
}

/// Monte Carlo Duncan estimates of one channel.
#[derive(Debug, Clone)]
pub struct DuncanMc {
    /// Error form `½E‖u − û‖²`.
    pub report: InfoReport,
    /// `½(E‖u‖² − E‖û‖²)`.
    pub difference_form: Estimate,
    /// `½E[E[‖u‖² | past] − ‖û‖²]`.
    pub conditional_variance_form: Option<Estimate>,
    /// Difference form minus error form, per path.
    pub form_gap: Estimate,
    /// Conditional-variance form minus error form, per path.
    pub conditional_variance_gap: Option<Estimate>,
    pub divergence_conditional: Estimate,
    pub divergence_marginal: Estimate,
    pub paths: Vec<PathSummary>,
    pub profiles: Profiles,
    pub n_paths: usize,
    pub failed_paths: usize,
    pub window: AveragingWindow,
    pub grid: TimeGrid,
}

impl DuncanMc {
    /// Mean and standard error of any per-path statistic.
    pub fn estimate<F: Fn(&PathSummary) -> f64>(&self, f: F) -> Estimate {
        let v: Vec<f64> = self.paths.iter().map(f).collect();
        Estimate::from_samples(&v)
    }

    pub fn rate(&self) -> Estimate {
        Estimate { mean: self.report.rate, std_error: self.report.mc_std_error.unwrap_or(0.0) }
    }

    /// Identities and sign constraints every Duncan run must satisfy.
    pub fn identity_verdicts(&self, prefix: &str) -> Vec<Verdict> {
        let k = SIGMA_MULTIPLIER;
        let mut out = vec![
            Verdict::equal("duncan_two_forms", self.difference_form.mean, self.report.rate, k * self.form_gap.std_error, "4σ"),
            Verdict::equal(
                "divergence_decomposition",
                self.divergence_conditional.mean,
                self.report.rate + self.divergence_marginal.mean,
                k * self.form_gap.std_error,
                "4σ",
            ),
            self.report.nonnegativity("total_information_nonnegative"),
            Verdict::at_least(
                "divergence_conditional_nonnegative",
                self.divergence_conditional.mean,
                0.0,
                k * self.divergence_conditional.std_error,
                "4σ",
            ),
            Verdict::at_least(
                "divergence_marginal_nonnegative",
                self.divergence_marginal.mean,
                0.0,
                k * self.divergence_marginal.std_error,
                "4σ",
            ),
        ];
        if let (Some(cv), Some(gap)) = (self.conditional_variance_form, self.conditional_variance_gap) {
            out.push(Verdict::equal("conditional_variance_form", cv.mean, self.report.rate, k * gap.std_error, "4σ"));
        }
        out.into_iter().map(|v| v.with_prefix(prefix)).collect()
    }

    pub fn quantities(&self, prefix: &str) -> Vec<super::Quantity> {
        use super::Quantity;
        let mut q = self.report.quantities(prefix);
        let e = |name: &str, est: Estimate| Quantity::with_error(format!("{prefix}.{name}"), est.mean, est.std_error);
        q.push(e("difference_form", self.difference_form));
        if let Some(cv) = self.conditional_variance_form {
            q.push(e("conditional_variance_form", cv));
        }
        q.push(e("form_gap", self.form_gap));
        q.push(e("divergence_conditional", self.divergence_conditional));
        q.push(e("divergence_marginal", self.divergence_marginal));
        q.push(Quantity::new(format!("{prefix}.n_paths"), self.n_paths as f64));
        q.push(Quantity::new(format!("{prefix}.failed_paths"), self.failed_paths as f64));
        q
    }

    /// CSV of the ensemble profiles, every `stride`-th grid point plus the last.
    pub fn profiles_csv(&self, name: &str, stride: usize) -> String {
        use std::fmt::Write as _;
        let p = &self.profiles;
        let mut out = format!("t,mean_{name}_sq,mean_{name}hat_sq,mean_error_sq,mean_state_sq");
        if p.conditional_variance.is_some() {
            out.push_str(",mean_conditional_variance");
        }
        out.push_str(",running_rate\n");
        let stride = stride.max(1);
        let last = p.signal.len() - 1;
        let mut acc = 0.0;
        for k in 0..p.signal.len() {
            let t = self.grid.time(k);
            let running = if k == 0 { p.error[0] * 0.5 } else { acc / t };
            if k + 1 < p.signal.len() {
                acc += 0.5 * p.error[k] * self.grid.dt;
            }
            if k % stride != 0 && k != last {
                continue;
            }
            write!(out, "{t:.12e},{:.12e},{:.12e},{:.12e},{:.12e}", p.signal[k], p.estimate[k], p.error[k], p.state_sq[k])
                .unwrap();
            if let Some(cv) = &p.conditional_variance {
                write!(out, ",{:.12e}", cv[k]).unwrap();
            }
            writeln!(out, ",{running:.12e}").unwrap();
        }
        out
    }
}

fn summarize(p: &PathIntegrands, window: &AveragingWindow, full: &AveragingWindow, horizon: f64) -> PathSummary {
    let diff: Vec<f64> = p.signal.iter().zip(&p.estimate).map(|(s, e)| s - e).collect();
    let horizon_error = 0.5 * full.left_mean(&p.error);
    PathSummary {
        error: 0.5 * window.left_mean(&p.error),
        difference: 0.5 * window.left_mean(&diff),
        conditional_variance: p.conditional_variance.as_ref().map(|cv| 0.5 * window.left_mean(cv)),
        signal: 0.5 * window.left_mean(&p.signal),
        estimate: 0.5 * window.left_mean(&p.estimate),
        total: horizon_error * horizon,
        horizon_error,
    }
}

fn add_into(acc: &mut Vec<f64>, v: &[f64]) {
    if acc.is_empty() {
        acc.extend_from_slice(v);
    } else {
        acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
    }
}

/// Run `path_fn` over `0..n_paths` and aggregate.
pub(crate) fn run_duncan<F>(
    route: RateRoute,
    grid: &TimeGrid,
    window: &AveragingWindow,
    n_paths: usize,
    path_fn: F,
) -> Result<DuncanMc>
where
    F: Fn(usize) -> Result<PathIntegrands> + Sync + Send,
{
    if n_paths < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 paths, got {n_paths}")));
    }
    let full = AveragingWindow::full(grid);
    let horizon = grid.n_steps as f64 * grid.dt;
    let mut paths = Vec::with_capacity(n_paths);
    let mut profiles = Profiles::default();
    let mut cv_sum: Option<Vec<f64>> = None;
    let mut failed = 0;
    let mut first_failure: Option<String> = None;
    let mut start = 0;
    while start < n_paths {
        let end = (start + BATCH).min(n_paths);
        let batch: Vec<Result<PathIntegrands>> = (start..end).into_par_iter().map(&path_fn).collect();
        for (offset, r) in batch.into_iter().enumerate() {
            match r {
                Ok(p) => {
                    if p.signal.len() != grid.n_steps + 1 {
                        return Err(Error::Dimension("path integrand length does not match the grid".into()));
                    }
                    paths.push(summarize(&p, window, &full, horizon));
                    add_into(&mut profiles.signal, &p.signal);
                    add_into(&mut profiles.estimate, &p.estimate);
                    add_into(&mut profiles.error, &p.error);
                    add_into(&mut profiles.state_sq, &p.state_sq);
                    if let Some(cv) = &p.conditional_variance {
                        add_into(cv_sum.get_or_insert_with(Vec::new), cv);
                    }
                }
                Err(e) => {
                    failed += 1;
                    if first_failure.is_none() {
                        first_failure = Some(format!("path {}: {e}", start + offset));
                    }
                }
            }
        }
        start = end;
    }
    if failed as f64 > MAX_FAILURE_FRACTION * n_paths as f64 || paths.len() < 2 {
        return Err(Error::TooManyFailures { failed, total: n_paths, first: first_failure.unwrap_or_default() });
    }
    let ok = paths.len() as f64;
    for v in [&mut profiles.signal, &mut profiles.estimate, &mut profiles.error, &mut profiles.state_sq] {
        v.iter_mut().for_each(|x| *x /= ok);
    }
    profiles.conditional_variance = cv_sum.map(|mut v| {
        v.iter_mut().for_each(|x| *x /= ok);
        v
    });

    let col = |f: &dyn Fn(&PathSummary) -> f64| Estimate::from_samples(&paths.iter().map(f).collect::<Vec<_>>());
    let rate = col(&|p| p.error);
    let total = col(&|p| p.total);
    let horizon_avg = col(&|p| p.horizon_error);
    let has_cv = paths.iter().all(|p| p.conditional_variance.is_some());
    let report = InfoReport::assemble(route, grid, window, rate.mean, horizon_avg.mean, Some(rate.std_error), Some(total.std_error));
    Ok(DuncanMc {
        report,
        difference_form: col(&|p| p.difference),
        conditional_variance_form: has_cv.then(|| col(&|p| p.conditional_variance.unwrap_or(0.0))),
        form_gap: col(&|p| p.difference - p.error),
        conditional_variance_gap: has_cv.then(|| col(&|p| p.conditional_variance.unwrap_or(0.0) - p.error)),
        divergence_conditional: col(&|p| p.signal),
        divergence_marginal: col(&|p| p.estimate),
        paths,
        profiles,
        n_paths,
        failed_paths: failed,
        window: *window,
        grid: *grid,
    })
}
