use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use infolim::experiments::{exit, exit_code, run_experiment, ExperimentConfig, GridSpec, McSpec, REGISTRY};
use infolim::{Error, Result};

/// Information rates of feedback and filtering channels.
#[derive(Parser)]
#[command(name = "infolim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its reports.
    Run(RunArgs),
    /// List the available experiments.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment name; overrides the config file.
    #[arg(long)]
    experiment: Option<String>,
    /// JSON config file. Flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed of all random streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root [default: $INFOLIM_OUTPUT_DIR, else ./results]
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    n_paths: Option<usize>,
    /// Horizon of the main grid (needs --dt).
    #[arg(long, requires = "dt")]
    horizon: Option<f64>,
    /// Step of the main grid (needs --horizon).
    #[arg(long, requires = "horizon")]
    dt: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    k: Option<f64>,
    /// Comma-separated real poles.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    poles: Option<Vec<f64>>,
    /// Comma-separated noise levels, largest first.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
}

impl RunArgs {
    fn config(self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        match self.experiment {
            Some(name) => cfg.experiment = name,
            None if cfg.experiment.is_empty() => {
                return Err(Error::Config("no experiment given (use --experiment or a config file)".into()));
            }
            None => {}
        }
        if self.seed.is_some() || self.n_paths.is_some() {
            let mc = cfg.mc.get_or_insert_with(McSpec::default);
            mc.master_seed = self.seed.or(mc.master_seed);
            mc.n_paths = self.n_paths.or(mc.n_paths);
        }
        if let (Some(horizon), Some(dt)) = (self.horizon, self.dt) {
            cfg.grid = Some(GridSpec { horizon, dt });
        }
        cfg.output_dir = self.output_dir.or(cfg.output_dir);
        cfg.alpha = self.alpha.or(cfg.alpha);
        cfg.k = self.k.or(cfg.k);
        cfg.poles = self.poles.or(cfg.poles);
        cfg.epsilons = self.epsilons.or(cfg.epsilons);
        Ok(cfg)
    }
}

fn run(args: RunArgs) -> Result<i32> {
    let cfg = args.config()?;
    let outcome = run_experiment(&cfg)?;
    let dir = outcome.write(&cfg.output_root())?;
    print!("{}", outcome.report_text());
    println!("reports written to {}", dir.display());
    for v in outcome.failures() {
        eprintln!("assertion failed: {v}");
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::List => {
            for e in REGISTRY {
                println!("{:<24} {}", e.name, e.summary);
            }
            exit::PASS
        }
        Command::Run(args) => run(args).unwrap_or_else(|e| {
            eprintln!("error: {e}");
            exit_code(&e)
        }),
    };
    ExitCode::from(code as u8)
}
