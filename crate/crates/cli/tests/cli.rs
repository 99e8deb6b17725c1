use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_peano-bsde"))
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.ini");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = "[experiment]\nscenario = uniqueness_convergence\nseed = 3\n\
[grid]\nsteps = 20\n[ensemble]\npaths = 400\n[generator]\nrho = sqrt\n\
[terminal]\nspec = constant value=1\n[scenario]\nsteps_list = 10, 20\nexpected = 2.25\nrel_tol = 0.05\n";

#[test]
fn run_writes_tables_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = bin().args(["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "2"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS finest_grid_error"));
    for f in ["convergence.csv", "solution.csv", "verdicts.csv", "report.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["pass"], true);
    assert_eq!(rep["seed"], 3);
}

#[test]
fn thread_count_and_repeat_runs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut tables = Vec::new();
    for (i, threads) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        let o = bin()
            .args(["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", threads, "--format", "csv"])
            .output()
            .unwrap();
        assert!(o.status.success());
        assert!(!out.join("report.json").exists());
        tables.push((fs::read(out.join("convergence.csv")).unwrap(), fs::read(out.join("solution.csv")).unwrap()));
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    bin().args(["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "77", "--format", "json"]).output().unwrap();
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["seed"], 77);
}

#[test]
fn failed_verdict_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("expected = 2.25", "expected = 3"));
    let out = dir.path().join("out");
    let o = bin().args(["run", "--config", &cfg, "--out", out.to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[experiment]\nscenario = nowhere\n");
    let o = bin().args(["run", "--config", &cfg]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().args(["run", "--config", dir.path().join("missing.ini").to_str().unwrap()]).output().unwrap();
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn failing_audit_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[experiment]\nscenario = uniqueness_convergence\n[generator]\nrho = sqrt\nlipschitz_y = 0.5\nbeta_tilde = 0.25\n";
    let cfg = write_config(dir.path(), text);
    let o = bin().args(["validate", "--config", &cfg]).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("invalid"));
    let o = bin().args(["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn validate_accepts_bundled_audit_config() {
    let o = bin().args(["list-scenarios", "--show-config", "assumption_audit"]).output().unwrap();
    assert!(o.status.success());
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &stdout(&o));
    let o = bin().args(["validate", "--config", &cfg]).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).lines().any(|l| l == "valid"));
}

#[test]
fn list_scenarios_prints_the_catalogue() {
    let o = bin().arg("list-scenarios").output().unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 7);
    for name in ["uniqueness_convergence", "multiplicity_zoo", "duality_frontier", "transform_crosscheck", "ez_utility", "assumption_audit", "lower_bound"] {
        assert!(text.contains(name), "{name}");
    }
}
