//! Drive a registry experiment from code, the way the `infolim` binary
//! does, and write its reports.
//!
//! ```text
//! cargo run --release --example run_experiment -- ltv_cor312 /tmp/infolim
//! ```

use std::path::PathBuf;

use infolim::experiments::{run_experiment, ExperimentConfig, REGISTRY};

fn main() -> infolim::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "bode_lemma310".into());
    let root = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("infolim"));

    if let Some(info) = REGISTRY.iter().find(|e| e.name == name) {
        println!("{}: {}", info.name, info.summary);
    }
    let cfg = ExperimentConfig::from_json(&format!(r#"{{"experiment": "{name}", "mc": {{"master_seed": 17}}}}"#))?;
    let outcome = run_experiment(&cfg)?;
    print!("{}", outcome.report_text());
    let dir = outcome.write(&root)?;
    println!("wrote {}", dir.display());
    std::process::exit(outcome.exit_code());
}
