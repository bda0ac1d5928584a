//! Named experiments behind the `infolim` binary.
//!
//! Each experiment resolves an [`ExperimentConfig`], runs the relevant
//! routes from [`crate::inforate`], and returns an [`ExperimentOutcome`]:
//! checked relations ([`Verdict`]), named numbers ([`Quantity`]) and
//! CSV series. [`ExperimentOutcome::write`] lays them out as
//!
//! ```text
//! <output_dir>/<experiment>/report.txt
//! <output_dir>/<experiment>/report.csv
//! <output_dir>/<experiment>/series/*.csv
//! ```

mod capacity;
mod filtering;
mod linear;
mod nonlinear;
pub mod systems;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inforate::{Quantity, Verdict};
use crate::sde::{SeedSpec, TimeGrid};
pub use systems::{Plant, SystemSpec};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "INFOLIM_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "results";
pub const DEFAULT_MASTER_SEED: u64 = 20_240_601;

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const ASSERTION_FAILURE: i32 = 1;
    pub const CONFIG_ERROR: i32 = 2;
    pub const NUMERICAL_BREAKDOWN: i32 = 3;
}

/// Exit code for an error raised while running an experiment.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidInput(_) | Error::Dimension(_) | Error::NoDichotomy { .. } | Error::Io(_) => {
            exit::CONFIG_ERROR
        }
        Error::Diverged { .. }
        | Error::Overflow { .. }
        | Error::NumericalBreakdown { .. }
        | Error::NotConverged { .. }
        | Error::Degeneracy { .. }
        | Error::TooManyFailures { .. } => exit::NUMERICAL_BREAKDOWN,
        Error::AssumptionViolated(_) | Error::PowerConstraintViolated { .. } | Error::Inconsistent(_) => {
            exit::ASSERTION_FAILURE
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub horizon: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub n_paths: Option<usize>,
    pub master_seed: Option<u64>,
}

/// One experiment run. Every field but `experiment` is optional; unset
/// fields take the experiment's defaults (see `docs/experiments.md`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub system: Option<SystemSpec>,
    /// Grid of the main (usually Monte Carlo) run.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub mc: Option<McSpec>,
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Scalar plant pole for `appendix_a` and `capacity_thm34`.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Scalar feedback gain for `appendix_a` and `capacity_thm34`.
    #[serde(default)]
    pub k: Option<f64>,
    /// Real open-loop poles for `lti_prop36`.
    #[serde(default)]
    pub poles: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn new(experiment: &str) -> Self {
        Self { experiment: experiment.to_string(), ..Default::default() }
    }

    /// Parse JSON; errors carry the line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn master_seed(&self) -> u64 {
        self.mc.and_then(|m| m.master_seed).unwrap_or(DEFAULT_MASTER_SEED)
    }

    /// `output_dir`, else `$INFOLIM_OUTPUT_DIR`, else `results`.
    pub fn output_root(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    /// Structural checks that do not depend on the experiment.
    pub fn validate(&self) -> Result<()> {
        find(&self.experiment)?;
        if let Some(g) = self.grid {
            TimeGrid::new(g.horizon, g.dt).map_err(|e| Error::Config(format!("grid: {e}")))?;
        }
        if let Some(n) = self.mc.and_then(|m| m.n_paths) {
            if n < 2 {
                return Err(Error::Config(format!("mc.n_paths must be at least 2, got {n}")));
            }
        }
        if let Some(eps) = &self.epsilons {
            if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(Error::Config("epsilons must be a non-empty list of positive numbers".into()));
            }
        }
        Ok(())
    }
}

/// A registry entry.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentInfo {
    pub name: &'static str,
    pub summary: &'static str,
    /// Acceptance criteria exercised, by number.
    pub criteria: &'static [u8],
    run: fn(&mut Run) -> Result<()>,
}

pub const REGISTRY: &[ExperimentInfo] = &[
    ExperimentInfo {
        name: "appendix_a",
        summary: "scalar loop dx = αx dt + de, u = −kx: closed-form error covariance, rate α⁺ by Riccati and Monte Carlo",
        criteria: &[1, 8, 9],
        run: linear::appendix_a,
    },
    ExperimentInfo {
        name: "lti_prop36",
        summary: "LTI feedback loops: rate equals the sum of open-loop unstable poles",
        criteria: &[2, 8],
        run: linear::lti_prop36,
    },
    ExperimentInfo {
        name: "lti_lemma37_nonlinear_k",
        summary: "saturating controller on an unstable scalar plant: rate at least the unstable pole",
        criteria: &[7, 8],
        run: nonlinear::lti_lemma37_nonlinear_k,
    },
    ExperimentInfo {
        name: "ltv_prop311",
        summary: "periodic LTV loop: rate = ⟨tr A_u⟩ − ½⟨tr Ṗ_uP_u⁻¹⟩ and the trace identity",
        criteria: &[8],
        run: linear::ltv_prop311,
    },
    ExperimentInfo {
        name: "ltv_cor312",
        summary: "periodic LTV loop: rate ≥ ⟨tr A_u⟩ ≥ Σλ̲ and the dichotomy-spectrum interval",
        criteria: &[8],
        run: linear::ltv_cor312,
    },
    ExperimentInfo {
        name: "nl_prop314",
        summary: "cubic plant under tanh feedback: two Duncan forms and the conditional-variance form",
        criteria: &[7, 8],
        run: nonlinear::nl_prop314,
    },
    ExperimentInfo {
        name: "filt_prop45",
        summary: "LTI filtering diag(1, −2): ε sweep down to the unstable-pole sum",
        criteria: &[3, 8],
        run: filtering::filt_prop45,
    },
    ExperimentInfo {
        name: "filt_lemma46_expansion",
        summary: "vanishing-noise Riccati structure: P → diag(0, P_u), stable block O(ε²)",
        criteria: &[4],
        run: filtering::filt_lemma46_expansion,
    },
    ExperimentInfo {
        name: "filt_prop48",
        summary: "periodic LTV filtering: reduced Riccati limit and spectral bounds",
        criteria: &[8],
        run: filtering::filt_prop48,
    },
    ExperimentInfo {
        name: "nl_prop49",
        summary: "cubic sensor on an OU state: Duncan forms; grid and particle filters against Kalman–Bucy",
        criteria: &[6, 7, 8],
        run: nonlinear::nl_prop49,
    },
    ExperimentInfo {
        name: "bode_lemma310",
        summary: "Bode integral with CB = 0: antistable trace against the sensitivity kernel",
        criteria: &[5],
        run: linear::bode_lemma310,
    },
    ExperimentInfo {
        name: "capacity_thm34",
        summary: "feedback capacity sandwich on the scalar loop",
        criteria: &[8, 9],
        run: capacity::capacity_thm34,
    },
    ExperimentInfo {
        name: "capacity_thm43",
        summary: "filtering capacity sandwich on diag(1, −2)",
        criteria: &[8],
        run: capacity::capacity_thm43,
    },
];

pub fn find(name: &str) -> Result<&'static ExperimentInfo> {
    REGISTRY.iter().find(|e| e.name == name).ok_or_else(|| {
        let names: Vec<&str> = REGISTRY.iter().map(|e| e.name).collect();
        Error::Config(format!("unknown experiment `{name}` (known: {})", names.join(", ")))
    })
}

/// A CSV time series written under `series/`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub csv: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutcome {
    pub experiment: String,
    pub verdicts: Vec<Verdict>,
    pub quantities: Vec<Quantity>,
    pub series: Vec<Series>,
    /// Free-form diagnostics for `report.txt`.
    pub notes: Vec<String>,
}

pub const REPORT_CSV_HEADER: &str = "experiment,kind,name,value,std_error,reference,tolerance,slack,status";

impl ExperimentOutcome {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(Verdict::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| !v.passed())
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn quantity(&self, name: &str) -> Option<&Quantity> {
        self.quantities.iter().find(|q| q.name == name)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() { exit::PASS } else { exit::ASSERTION_FAILURE }
    }

    pub fn report_text(&self) -> String {
        let mut out = String::new();
        let n_fail = self.failures().count();
        writeln!(out, "experiment {}", self.experiment).unwrap();
        writeln!(out, "{} checks, {} failed", self.verdicts.len(), n_fail).unwrap();
        writeln!(out).unwrap();
        for v in &self.verdicts {
            writeln!(out, "{v}").unwrap();
        }
        if !self.notes.is_empty() {
            writeln!(out).unwrap();
            for n in &self.notes {
                writeln!(out, "# {n}").unwrap();
            }
        }
        writeln!(out).unwrap();
        writeln!(out, "{}", if n_fail == 0 { "RESULT PASS" } else { "RESULT FAIL" }).unwrap();
        out
    }

    /// One row per quantity and per verdict. Deterministic for a fixed
    /// config and seed.
    pub fn report_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        let e = &self.experiment;
        for q in &self.quantities {
            let se = q.std_error.map(|s| format!("{s:.12e}")).unwrap_or_default();
            writeln!(out, "{e},quantity,{},{:.12e},{se},,,,", q.name, q.value).unwrap();
        }
        for v in &self.verdicts {
            writeln!(
                out,
                "{e},verdict,{},{:.12e},,{:.12e},{:.12e},{:.12e},{}",
                v.name,
                v.lhs,
                v.rhs,
                v.tolerance,
                v.slack(),
                v.status()
            )
            .unwrap();
        }
        out
    }

    /// Write `report.txt`, `report.csv` and `series/*.csv` under
    /// `root/<experiment>`; returns that directory.
    pub fn write(&self, root: &Path) -> Result<PathBuf> {
        let dir = root.join(&self.experiment);
        std::fs::create_dir_all(dir.join("series"))?;
        std::fs::write(dir.join("report.txt"), self.report_text())?;
        std::fs::write(dir.join("report.csv"), self.report_csv())?;
        for s in &self.series {
            std::fs::write(dir.join("series").join(format!("{}.csv", s.name)), &s.csv)?;
        }
        Ok(dir)
    }
}

/// Mutable state of one experiment run.
pub(crate) struct Run<'a> {
    pub cfg: &'a ExperimentConfig,
    pub out: ExperimentOutcome,
}

impl Run<'_> {
    /// The main grid: the configured one, else `default`.
    pub fn grid(&self, default: (f64, f64)) -> Result<TimeGrid> {
        let (h, dt) = self.cfg.grid.map_or(default, |g| (g.horizon, g.dt));
        TimeGrid::new(h, dt).map_err(|e| Error::Config(format!("grid: {e}")))
    }

    pub fn n_paths(&self, default: usize) -> usize {
        self.cfg.mc.and_then(|m| m.n_paths).unwrap_or(default)
    }

    pub fn seed(&self) -> SeedSpec {
        SeedSpec::new(self.cfg.master_seed())
    }

    pub fn epsilons(&self, default: &[f64]) -> Vec<f64> {
        self.cfg.epsilons.clone().unwrap_or_else(|| default.to_vec())
    }

    /// The configured system, else `default()`.
    pub fn plant(&self, default: impl FnOnce() -> Result<Plant>) -> Result<Plant> {
        match &self.cfg.system {
            Some(spec) => spec.resolve(),
            None => default(),
        }
    }

    pub fn check(&mut self, v: Verdict) {
        self.out.verdicts.push(v);
    }

    pub fn checks(&mut self, prefix: &str, vs: impl IntoIterator<Item = Verdict>) {
        self.out.verdicts.extend(vs.into_iter().map(|v| v.with_prefix(prefix)));
    }

    pub fn quantities(&mut self, qs: impl IntoIterator<Item = Quantity>) {
        self.out.quantities.extend(qs);
    }

    pub fn quantity(&mut self, name: impl Into<String>, value: f64) {
        self.out.quantities.push(Quantity::new(name, value));
    }

    pub fn series(&mut self, name: impl Into<String>, csv: String) {
        self.out.series.push(Series { name: name.into(), csv });
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.out.notes.push(note.into());
    }
}

/// Grid stride that keeps series files near `rows` lines.
pub(crate) fn stride_for(grid: &TimeGrid, rows: usize) -> usize {
    (grid.n_steps / rows.max(1)).max(1)
}

/// Run the named experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let info = find(&cfg.experiment)?;
    let mut run = Run { cfg, out: ExperimentOutcome { experiment: info.name.to_string(), ..Default::default() } };
    (info.run)(&mut run)?;
    Ok(run.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_experiment_maps_to_a_criterion() {
        assert_eq!(REGISTRY.len(), 13);
        for e in REGISTRY {
            assert!(!e.criteria.is_empty(), "{}", e.name);
        }
        for c in 1..=9u8 {
            assert!(REGISTRY.iter().any(|e| e.criteria.contains(&c)), "criterion {c}");
        }
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = ExperimentConfig::from_json("{\"experiment\": \"appendix_a\",\n \"grid\": {\"horizon\": 1, \"dtt\": 2}}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dtt") && msg.contains("line 2"), "{msg}");
        assert_eq!(exit_code(&err), exit::CONFIG_ERROR);
        let cfg = ExperimentConfig::new("nope");
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn csv_rows_are_stable() {
        let out = ExperimentOutcome {
            experiment: "x".into(),
            verdicts: vec![Verdict::equal("v", 1.0, 1.0, 0.1, "abs")],
            quantities: vec![Quantity::with_error("q", 2.0, 0.5)],
            ..Default::default()
        };
        let csv = out.report_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], REPORT_CSV_HEADER);
        assert_eq!(lines[1], "x,quantity,q,2.000000000000e0,5.000000000000e-1,,,,");
        assert!(lines[2].starts_with("x,verdict,v,") && lines[2].ends_with(",PASS"));
        assert_eq!(lines[2].split(',').count(), 9);
    }
}
