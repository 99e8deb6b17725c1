use peano_bsde::config::{ExperimentConfig, Scenario};
use peano_bsde::exec::Execution;
use peano_bsde::experiment::{default_config, list_scenarios, run, validate, OutputFormat, RunOptions};
use std::fs;
use std::path::Path;

fn config(text: &str) -> ExperimentConfig {
    text.parse().unwrap()
}

fn small_uniqueness() -> ExperimentConfig {
    config(
        "[experiment]\nscenario = uniqueness_convergence\nseed = 3\n\
         [grid]\nhorizon = 1\nsteps = 20\n\
         [ensemble]\npaths = 500\n\
         [generator]\nrho = sqrt\n\
         [terminal]\nspec = lognormal m=1 sigma=0.3\n\
         [scenario]\nsteps_list = 10, 20\ncsv_paths = 5\n",
    )
}

fn opts(dir: &Path, format: OutputFormat, exec: Execution) -> RunOptions {
    RunOptions { out: dir.to_path_buf(), format, exec }
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn repeated_runs_write_identical_csvs() {
    let cfg = small_uniqueness();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&cfg, &opts(a.path(), OutputFormat::Csv, Execution::Sequential)).unwrap();
    run(&cfg, &opts(b.path(), OutputFormat::Csv, Execution::Parallel)).unwrap();
    let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
    assert!(fa.len() >= 3);
    assert_eq!(fa, fb);
}

#[test]
fn output_format_controls_files() {
    let cfg = small_uniqueness();
    let csv = tempfile::tempdir().unwrap();
    run(&cfg, &opts(csv.path(), OutputFormat::Csv, Execution::Parallel)).unwrap();
    assert!(!csv.path().join("report.json").exists());
    assert!(csv.path().join("verdicts.csv").exists());

    let json = tempfile::tempdir().unwrap();
    let rep = run(&cfg, &opts(json.path(), OutputFormat::Json, Execution::Parallel)).unwrap();
    let text = fs::read_to_string(json.path().join("report.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed["scenario"], "uniqueness_convergence");
    assert_eq!(parsed["seed"], 3);
    assert_eq!(parsed["pass"], rep.pass);
    assert!(csv_files(json.path()).iter().all(|(n, _)| n == "verdicts.csv"));
}

#[test]
fn seed_changes_the_paths() {
    let a = run(&small_uniqueness(), &opts(tempfile::tempdir().unwrap().path(), OutputFormat::Json, Execution::Parallel)).unwrap();
    let mut cfg = small_uniqueness();
    cfg.seed = 4;
    let b = run(&cfg, &opts(tempfile::tempdir().unwrap().path(), OutputFormat::Json, Execution::Parallel)).unwrap();
    assert_ne!(a.summaries["y0_finest"], b.summaries["y0_finest"]);
}

#[test]
fn every_scenario_has_a_parseable_default() {
    let names: Vec<_> = list_scenarios().into_iter().map(|s| s.name).collect();
    assert_eq!(names.len(), Scenario::ALL.len());
    for s in Scenario::ALL {
        let cfg = config(default_config(s));
        assert_eq!(cfg.scenario, s);
        assert!(names.contains(&s.name().to_string()));
    }
}

#[test]
fn validate_accepts_the_square_root_generator() {
    let rep = validate(&config(default_config(Scenario::AssumptionAudit))).unwrap();
    assert!(rep.pass, "{:?}", rep.checks);
    assert_eq!(rep.exit_code(), 0);
}

#[test]
fn validate_flags_an_understated_lipschitz_constant() {
    let cfg = config(
        "[experiment]\nscenario = assumption_audit\nseed = 1\n\
         [generator]\nrho = sqrt\nlipschitz_y = 0.5\nbeta_tilde = 0.25\n",
    );
    let rep = validate(&cfg).unwrap();
    assert!(!rep.pass);
    assert_eq!(rep.exit_code(), 3);
    let worst = rep.checks.iter().filter(|c| !c.pass).fold(0.0f64, |a, c| a.max(c.value));
    assert!(worst > 0.1, "slack {worst}");
}

#[test]
fn validate_rejects_an_out_of_range_preference() {
    let cfg = config("[experiment]\nscenario = ez_utility\n[ez]\nbeta = 1\nc = 1\nrho = 1.2\n[terminal]\nspec = constant value=4\n");
    let rep = validate(&cfg).unwrap();
    assert!(!rep.pass);
    assert!(rep.checks.iter().any(|c| c.name == "ez_parameter_range" && !c.pass));
}

#[test]
fn bad_config_values_are_config_errors() {
    let bad = "[experiment]\nscenario = uniqueness_convergence\n[grid]\nsteps = many\n";
    assert!(bad.parse::<ExperimentConfig>().is_err());
    let unknown = "[experiment]\nscenario = nothing\n";
    assert!(unknown.parse::<ExperimentConfig>().is_err());
}
