use std::path::Path;
use std::process::{Command, Output};

use cran_swipt::experiment::CSV_COLUMNS;

const TINY: &str = r#"
[topology]
n_et = 3

[run]
n_trials = 2
seed = 5
algorithms = ["alg1", "all_fet", "all_met"]

[sweep]
values = [-17.0, -15.0]

[longterm]
n_trials = 2
q_training = 3
q_longterm = 2
"#;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cran-swipt")).args(args).output().expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn single_slot_csv_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = cli(&["single-slot", "--config", &cfg]);
    let b = cli(&["single-slot", "--config", &cfg]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(lines.count(), 2 * 3);
}

#[test]
fn out_file_and_append() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("rows.csv");
    let out = out.to_str().unwrap();
    assert!(cli(&["sweep", "--config", &cfg, "--out", out]).status.success());
    let first = std::fs::read_to_string(out).unwrap();
    assert_eq!(first.lines().count(), 1 + 2 * 2 * 3);
    assert!(cli(&["sweep", "--config", &cfg, "--out", out, "--append"]).status.success());
    let second = std::fs::read_to_string(out).unwrap();
    assert_eq!(second.lines().count(), 1 + 2 * 2 * 2 * 3);
    let foreign = cli(&["sweep", "--config", &cfg, "--seed", "6", "--out", out, "--append"]);
    assert_eq!(foreign.status.code(), Some(1));
    assert_eq!(std::fs::read_to_string(out).unwrap(), second);
}

#[test]
fn longterm_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = cli(&["longterm", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().skip(1).any(|l| l.contains(",training,")));
    assert!(text.lines().skip(1).any(|l| l.contains(",longterm,") && l.contains("frozen_hybrid")));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[system]\nbogus = 1\n").unwrap();
    let o = cli(&["single-slot", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));

    let big = dir.path().join("big.toml");
    std::fs::write(&big, "topology.n_et = 13\nrun.algorithms = [\"brute_force\"]\n").unwrap();
    assert_eq!(cli(&["single-slot", "--config", big.to_str().unwrap()]).status.code(), Some(1));

    assert_eq!(cli(&["single-slot", "--algorithms", "alg9"]).status.code(), Some(1));
    assert_eq!(cli(&["no-such-mode"]).status.code(), Some(1));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
}

#[test]
fn validate_exit_codes() {
    let ok = cli(&["validate", "--instances", "2"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(!String::from_utf8_lossy(&ok.stdout).contains("FAIL"));

    let bad = cli(&["validate", "--instances", "8", "--solver-tol", "1e-2"]);
    assert_eq!(bad.status.code(), Some(2));
    let text = String::from_utf8_lossy(&bad.stdout);
    assert!(text.contains("FAIL") && text.contains("seed"));
}
