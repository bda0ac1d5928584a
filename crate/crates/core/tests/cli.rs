use std::path::Path;
use std::process::{Command, Output};

fn infolim(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_infolim"));
    cmd.args(args).env_remove("INFOLIM_OUTPUT_DIR");
    if let Some(dir) = out_env {
        cmd.env("INFOLIM_OUTPUT_DIR", dir);
    }
    cmd.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn list_names_every_experiment() {
    let o = infolim(&["list"], None);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    for e in infolim::experiments::REGISTRY {
        assert!(text.contains(e.name), "{} missing", e.name);
    }
}

#[test]
fn passing_run_writes_reports_under_the_env_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = infolim(&["run", "--experiment", "filt_lemma46_expansion"], Some(dir.path()));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let root = dir.path().join("filt_lemma46_expansion");
    let txt = std::fs::read_to_string(root.join("report.txt")).unwrap();
    assert!(txt.trim_end().ends_with("RESULT PASS"));
    let csv = std::fs::read_to_string(root.join("report.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(infolim::experiments::REPORT_CSV_HEADER));
    assert!(root.join("series/expansion.csv").exists());
}

#[test]
fn failed_assertion_exits_one_and_names_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    // the block structure only appears for small ε
    let o = infolim(&["run", "--experiment", "filt_lemma46_expansion", "--epsilons", "0.5,0.2", "--output-dir", out], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("assertion failed: FAIL block_deviation"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = infolim(&["run", "--experiment", "no_such_experiment"], Some(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown experiment"));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"experiment\": \"appendix_a\",\n  \"alpah\": 1\n}\n").unwrap();
    let o = infolim(&["run", "--config", cfg.to_str().unwrap()], Some(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("alpah") && err.contains("line 3"), "{err}");

    let o = infolim(&["run", "--experiment", "appendix_a", "--horizon", "1"], Some(dir.path()));
    assert_eq!(o.status.code(), Some(2), "--horizon without --dt");
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    // the open-loop state outgrows the explosion bound on a long grid
    let o = infolim(
        &["run", "--experiment", "filt_prop48", "--horizon", "60", "--dt", "0.01", "--n-paths", "4"],
        Some(dir.path()),
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"experiment": "capacity_thm34", "grid": {"horizon": 4, "dt": 0.01}, "mc": {"n_paths": 50, "master_seed": 1}}"#,
    )
    .unwrap();
    let run = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        let o = infolim(&["run", "--config", cfg.to_str().unwrap(), "--seed", seed, "--output-dir", out.to_str().unwrap()], None);
        assert!(o.status.code() == Some(0) || o.status.code() == Some(1), "{}", stderr(&o));
        std::fs::read(out.join("capacity_thm34/report.csv")).unwrap()
    };
    let (a, b, c) = (run("5", "a"), run("5", "b"), run("6", "c"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = infolim::experiments::ExperimentConfig::from_file(&path).unwrap();
            cfg.validate().unwrap();
            if let Some(spec) = &cfg.system {
                spec.resolve().unwrap();
            }
            n += 1;
        }
    }
    assert!(n >= 5);
}
