//! Scenario runner: builds the inputs from a config, solves, checks the
//! verdicts and writes CSV tables plus a JSON report.

use crate::config::{ConfigError, ExperimentConfig, Scenario};
use crate::dual::{
    admissibility_check, duality_gap, is_path_free, lower_bound_certificate, primal_solution, ControlProcess,
    ControlSpec, DualError,
};
use crate::engine::{EngineError, PathEnsemble, TerminalSpec, TimeGrid};
use crate::exec::Execution;
use crate::peano::PeanoError;
use crate::solver::{
    assumption_audit, deterministic_restriction, maximal_solution, multiplicity_family, solve_backward_euler,
    solve_deterministic_ode, AuditBox, GeneratorSpec, SolutionField, SolverError, SolverOptions, AUDIT_TOL,
    DEFAULT_SCHEDULE,
};
use crate::transform::{
    ez_closed_form, ez_to_special, solve_special, theta_difference_check, transformed_generator, EzGenerator,
    SpecialGenerator, TransformError,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("assumption audit failed: {0}")]
    Audit(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("writing output: {0}")]
    Io(String),
}

impl ExperimentError {
    /// 2 for config errors, 3 for audit failures, 4 for solver and output
    /// errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Audit(_) => 3,
            ExperimentError::Solver(_) | ExperimentError::Io(_) => 4,
        }
    }
}

macro_rules! solver_from {
    ($($t:ty),*) => {$(
        impl From<$t> for ExperimentError {
            fn from(e: $t) -> Self {
                ExperimentError::Solver(e.to_string())
            }
        }
    )*};
}
solver_from!(SolverError, DualError, TransformError, EngineError, PeanoError);

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

impl From<csv::Error> for ExperimentError {
    fn from(e: csv::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "both" => Ok(OutputFormat::Both),
            other => Err(format!("unknown format '{other}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub format: OutputFormat,
    pub exec: Execution,
}

/// A named check with its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub invariant: String,
    pub value: f64,
    /// `"<="` or `">="`.
    pub comparison: String,
    pub tolerance: f64,
    pub pass: bool,
}

impl Verdict {
    pub fn at_most(name: &str, invariant: &str, value: f64, tolerance: f64) -> Self {
        Verdict {
            name: name.into(),
            invariant: invariant.into(),
            value,
            comparison: "<=".into(),
            tolerance,
            pass: value <= tolerance,
        }
    }

    pub fn at_least(name: &str, invariant: &str, value: f64, tolerance: f64) -> Self {
        Verdict {
            name: name.into(),
            invariant: invariant.into(),
            value,
            comparison: ">=".into(),
            tolerance,
            pass: value >= tolerance,
        }
    }
}

/// A CSV table; every cell is text so floats keep their shortest exact form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn write(&self, dir: &Path) -> Result<PathBuf, ExperimentError> {
        let path = dir.join(format!("{}.csv", self.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(path)
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn verdict_table(verdicts: &[Verdict]) -> Table {
    let mut t = Table::new("verdicts", &["name", "invariant", "value", "comparison", "tolerance", "pass"]);
    for v in verdicts {
        t.push(vec![
            v.name.clone(),
            v.invariant.clone(),
            num(v.value),
            v.comparison.clone(),
            num(v.tolerance),
            v.pass.to_string(),
        ]);
    }
    t
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub anchor: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub summaries: BTreeMap<String, f64>,
    pub verdicts: Vec<Verdict>,
    pub files: Vec<String>,
    pub wall_clock_seconds: f64,
    pub pass: bool,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl ExperimentReport {
    /// 0 when every verdict passes; 3 for a failed audit scenario and 1 for
    /// any other failed verdict.
    pub fn exit_code(&self) -> i32 {
        match (self.pass, self.scenario) {
            (true, _) => 0,
            (false, Scenario::AssumptionAudit) => 3,
            (false, _) => 1,
        }
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioInfo {
    pub name: String,
    pub anchor: String,
    pub description: String,
}

/// The catalogue, in a fixed order.
pub fn list_scenarios() -> Vec<ScenarioInfo> {
    Scenario::ALL
        .iter()
        .map(|s| {
            let (anchor, description) = describe(*s);
            ScenarioInfo { name: s.name().into(), anchor: anchor.into(), description: description.into() }
        })
        .collect()
}

fn describe(s: Scenario) -> (&'static str, &'static str) {
    match s {
        Scenario::UniquenessConvergence => (
            "y' = -sqrt(y), y(T) = 1 gives y(0) = (1 + T/2)^2",
            "Backward Euler convergence in N to the unique solution with a positive terminal value",
        ),
        Scenario::MultiplicityZoo => (
            "y' = -sqrt(y), y(T) = 0 has y(t) = ((c - t)^+)^2 / 4 for every c in [0, T]",
            "The family of solutions from a zero terminal value, bracketed by the minimal and maximal solvers",
        ),
        Scenario::DualityFrontier => (
            "Y_0 = inf_q Y^q_0, f*(t, q) = sup_y (f(t, y) - q y)",
            "Controlled linear BSDEs over a control family against the primal value",
        ),
        Scenario::TransformCrosscheck => (
            "Y_tilde = (e^{int k2} Y)^{1-a} / (1 - a)",
            "Direct power-type solve against the convex quadratic solve after the change of variables",
        ),
        Scenario::EzUtility => (
            "g(y) = (rho / beta)(c^rho y^{1-rho} - y)",
            "Epstein-Zin utility against its closed form for deterministic endowments",
        ),
        Scenario::AssumptionAudit => (
            "g = f + f_bar + f_tilde: concave sandwich, one-sided monotone, Lipschitz",
            "Sampled check of every structural assumption a generator declares",
        ),
        Scenario::LowerBound => (
            "Y_t >= e^{-A_t} Phi^{-1}(E_Q[Phi(xi) | F_t] + T - t)",
            "Lower-bound certificate from the reference function at every grid node",
        ),
    }
}

/// Built-in config text for each scenario.
pub fn default_config(s: Scenario) -> &'static str {
    match s {
        Scenario::UniquenessConvergence => include_str!("../configs/uniqueness_convergence.ini"),
        Scenario::MultiplicityZoo => include_str!("../configs/multiplicity_zoo.ini"),
        Scenario::DualityFrontier => include_str!("../configs/duality_frontier.ini"),
        Scenario::TransformCrosscheck => include_str!("../configs/transform_crosscheck.ini"),
        Scenario::EzUtility => include_str!("../configs/ez_utility.ini"),
        Scenario::AssumptionAudit => include_str!("../configs/assumption_audit.ini"),
        Scenario::LowerBound => include_str!("../configs/lower_bound.ini"),
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    opts: SolverOptions,
    exec: Execution,
    summaries: BTreeMap<String, f64>,
    verdicts: Vec<Verdict>,
    tables: Vec<Table>,
}

impl Ctx<'_> {
    fn grid(&self, steps: usize) -> Result<TimeGrid, ExperimentError> {
        Ok(TimeGrid::new(self.cfg.horizon, steps)?)
    }

    fn ensemble(&self, steps: usize, deterministic: bool) -> Result<PathEnsemble, ExperimentError> {
        let grid = self.grid(steps)?;
        Ok(if deterministic {
            PathEnsemble::deterministic(grid, self.cfg.dim)
        } else {
            PathEnsemble::simulate(grid, self.cfg.paths, self.cfg.dim, self.cfg.seed, self.exec)?
        })
    }

    fn options_for(&self, terminal: &TerminalSpec) -> SolverOptions {
        let mut o = self.opts;
        o.basis = terminal.basis(o.basis);
        o
    }

    fn apply_basis(&mut self) -> Result<(), ExperimentError> {
        self.opts.basis.degree = self.cfg.param("basis_degree")?;
        Ok(())
    }

    fn summary(&mut self, key: &str, v: f64) {
        self.summaries.insert(key.into(), v);
    }

    fn csv_paths(&self) -> Result<usize, ExperimentError> {
        Ok(self.cfg.param_or("csv_paths", 100usize)?)
    }
}

fn audit_box(cfg: &ExperimentConfig) -> AuditBox {
    AuditBox { dim: cfg.dim, ..AuditBox::default() }
}

fn preflight(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    cfg.terminal.validate().map_err(|e| ConfigError::Value {
        section: "terminal".into(),
        key: "spec".into(),
        message: e.to_string(),
    })?;
    let uses_generator = matches!(
        cfg.scenario,
        Scenario::UniquenessConvergence | Scenario::MultiplicityZoo | Scenario::DualityFrontier | Scenario::LowerBound
    );
    if uses_generator {
        if cfg.generator.concave.is_none() {
            return Err(ConfigError::MissingSection("generator".into()).into());
        }
        let budget = cfg.param_or("audit_budget", 2000usize)?;
        let report = assumption_audit(&cfg.generator, budget, &audit_box(cfg), cfg.seed)?;
        if !report.pass {
            let msg: Vec<String> =
                report.failures().iter().map(|c| format!("{} slack {:e}", c.name, c.worst_slack)).collect();
            return Err(ExperimentError::Audit(msg.join(", ")));
        }
    }
    if let Some(ez) = &cfg.ez {
        ez.validate().map_err(|e| ExperimentError::Audit(e.to_string()))?;
    }
    if let Some(sg) = &cfg.special {
        sg.validate().map_err(|e| ExperimentError::Audit(e.to_string()))?;
    }
    Ok(())
}

/// Run the configured scenario and write its outputs under `opts.out`.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport, ExperimentError> {
    let start = Instant::now();
    preflight(cfg)?;
    let mut ctx = Ctx {
        cfg,
        opts: SolverOptions { exec: opts.exec, ..SolverOptions::default() },
        exec: opts.exec,
        summaries: BTreeMap::new(),
        verdicts: Vec::new(),
        tables: Vec::new(),
    };
    ctx.apply_basis()?;
    match cfg.scenario {
        Scenario::UniquenessConvergence => uniqueness(&mut ctx)?,
        Scenario::MultiplicityZoo => multiplicity(&mut ctx)?,
        Scenario::DualityFrontier => duality(&mut ctx)?,
        Scenario::TransformCrosscheck => transform(&mut ctx)?,
        Scenario::EzUtility => ez_utility(&mut ctx)?,
        Scenario::AssumptionAudit => audit(&mut ctx)?,
        Scenario::LowerBound => lower_bound(&mut ctx)?,
    }
    let vt = verdict_table(&ctx.verdicts);
    ctx.tables.push(vt);
    let pass = ctx.verdicts.iter().all(|v| v.pass);
    let mut report = ExperimentReport {
        scenario: cfg.scenario,
        anchor: describe(cfg.scenario).0.into(),
        seed: cfg.seed,
        config: cfg.echo.clone(),
        summaries: ctx.summaries,
        verdicts: ctx.verdicts,
        files: Vec::new(),
        wall_clock_seconds: 0.0,
        pass,
        tables: ctx.tables,
    };
    fs::create_dir_all(&opts.out)?;
    if opts.format != OutputFormat::Json {
        for t in &report.tables {
            let p = t.write(&opts.out)?;
            report.files.push(p.file_name().unwrap_or_default().to_string_lossy().into_owned());
        }
    }
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    if opts.format != OutputFormat::Csv {
        report.files.push("report.json".into());
        let json = serde_json::to_string_pretty(&report).map_err(|e| ExperimentError::Io(e.to_string()))?;
        fs::write(opts.out.join("report.json"), json + "\n")?;
    }
    Ok(report)
}

fn solution_table(name: &str, sol: &SolutionField, max_paths: usize) -> Table {
    let mut t = Table::new(name, &["step", "t", "path", "y", "z_norm"]);
    let n = sol.grid.steps();
    let paths = max_paths.min(sol.y.paths());
    for i in 0..=n {
        for m in 0..paths {
            let z = if i < n { num(sol.z.norm(i, m)) } else { String::new() };
            t.push(vec![i.to_string(), num(sol.grid.time(i)), m.to_string(), num(sol.y.scalar(i, m)), z]);
        }
    }
    t
}

/// ODE value at `t = 0` when the inputs are deterministic.
fn ode_reference(spec: &GeneratorSpec, terminal: &TerminalSpec, grid: TimeGrid) -> Result<Option<f64>, ExperimentError> {
    let (Some(xi), true) = (terminal.as_constant(), is_path_free(spec)) else { return Ok(None) };
    let ode = solve_deterministic_ode(deterministic_restriction(spec, grid), xi, &grid)?;
    Ok(Some(ode.values[0]))
}

fn uniqueness(ctx: &mut Ctx) -> Result<(), ExperimentError> {
    let cfg = ctx.cfg;
    let steps_list = ctx.cfg.param_list("steps_list", &[25.0, 50.0, 100.0, 200.0])?;
    let rel_tol = cfg.param_or("rel_tol", 0.01)?;
    let ode_tol = cfg.param_or("ode_tol", 1e-8)?;
    let expected: Option<f64> = cfg.param("expected")?;
    let finest = steps_list.iter().fold(0.0f64, |a, b| a.max(*b)) as usize;
    let ode = ode_reference(&cfg.generator, &cfg.terminal, ctx.grid(finest.max(1))?)?;
    if let Some(v) = ode {
        ctx.summary("ode_y0", v);
    }
    if let (Some(v), Some(e)) = (ode, expected) {
        ctx.verdicts.push(Verdict::at_most("ode_matches_expected", "|y0_ode - expected|", (v - e).abs(), ode_tol));
    }
    let reference = ode.or(expected);
    let opts = ctx.options_for(&cfg.terminal);
    let mut table = Table::new("convergence", &["steps", "dt", "y0", "y0_se", "reference", "abs_error", "rel_error"]);
    let mut last = None;
    let mut errors = Vec::new();
    for &n in &steps_list {
        let n = n as usize;
        let ens = ctx.ensemble(n, cfg.deterministic)?;
        let xi = cfg.terminal.sample(&ens)?;
        let sol = solve_backward_euler(&cfg.generator, &xi, &ens, &opts)?;
        let (y0, se) = (sol.y0(), sol.y0_se());
        let (abs, rel) = match reference {
            Some(r) => ((y0 - r).abs(), (y0 - r).abs() / r.abs().max(1e-300)),
            None => (f64::NAN, f64::NAN),
        };
        errors.push((abs, se));
        table.push(vec![
            n.to_string(),
            num(ens.grid().dt()),
            num(y0),
            num(se),
            reference.map(num).unwrap_or_default(),
            num(abs),
            num(rel),
        ]);
        last = Some((sol, rel));
    }
    ctx.tables.push(table);
    let (sol, rel) = last.ok_or_else(|| ExperimentError::Config(ConfigError::Value {
        section: "scenario".into(),
        key: "steps_list".into(),
        message: "empty".into(),
    }))?;
    ctx.summary("y0_finest", sol.y0());
    ctx.summary("y0_se_finest", sol.y0_se());
    if !rel.is_nan() {
        ctx.verdicts.push(Verdict::at_most("finest_grid_error", "|y0 - reference| / reference at the finest N", rel, rel_tol));
        let (first, first_se) = errors[0];
        let (fin, fin_se) = errors[errors.len() - 1];
        ctx.verdicts.push(Verdict::at_most(
            "error_not_growing",
            "error(finest) - error(coarsest) - 3 (se + se)",
            fin - first - 3.0 * (first_se + fin_se),
            1e-12,
        ));
    }
    let max_paths = ctx.csv_paths()?;
    ctx.tables.push(solution_table("solution", &sol, max_paths));
    Ok(())
}

fn multiplicity(ctx: &mut Ctx) -> Result<(), ExperimentError> {
    let cfg = ctx.cfg;
    if cfg.terminal.as_constant() != Some(0.0) {
        return Err(ConfigError::Value {
            section: "terminal".into(),
            key: "spec".into(),
            message: "the multiplicity scenario needs a zero terminal value".into(),
        }
        .into());
    }
    let cs = cfg.param_list("c_values", &[0.0, 0.25, 0.5, 1.0])?;
    let schedule = cfg.param_list("schedule", &DEFAULT_SCHEDULE)?;
    let bracket_tol = cfg.param_or("bracket_tol", 0.01)?;
    let residual_factor = cfg.param_or("residual_factor", 1.0)?;
    let grid = ctx.grid(cfg.steps)?;
    let dt = grid.dt();
    let mut fam = Table::new("family", &["c", "y0", "expected_y0", "max_residual", "dt"]);
    let mut paths = Table::new(
        "family_paths",
        &std::iter::once("t".to_string()).chain(cs.iter().map(|c| format!("c={c}"))).collect::<Vec<_>>()
            .iter().map(String::as_str).collect::<Vec<_>>(),
    );
    let mut worst_y0 = 0.0f64;
    let mut worst_res = 0.0f64;
    let mut members = Vec::new();
    for &c in &cs {
        let p = multiplicity_family(c, &grid)?;
        worst_y0 = worst_y0.max((p.values[0] - c * c / 4.0).abs());
        worst_res = worst_res.max(p.max_residual);
        fam.push(vec![num(c), num(p.values[0]), num(c * c / 4.0), num(p.max_residual), num(dt)]);
        members.push(p);
    }
    for i in 0..=grid.steps() {
        let mut row = vec![num(grid.time(i))];
        row.extend(members.iter().map(|p| num(p.values[i])));
        paths.push(row);
    }
    ctx.tables.push(fam);
    ctx.tables.push(paths);
    ctx.verdicts.push(Verdict::at_most("family_initial_values", "max_c |y_c(0) - c^2/4|", worst_y0, 1e-12));
    ctx.verdicts.push(Verdict::at_most(
        "family_residual_order",
        "max per-step integral residual / dt^2",
        worst_res / (dt * dt),
        residual_factor,
    ));

    let ens = PathEnsemble::deterministic(grid, cfg.dim);
    let xi = vec![0.0];
    let minimal = primal_solution(&cfg.generator, &xi, &ens, &ctx.opts)?;
    let maximal = maximal_solution(&cfg.generator, &xi, &ens, &schedule, &ctx.opts)?;
    let top = cfg.horizon * cfg.horizon / 4.0;
    let mut br = Table::new("brackets", &["solver", "slope", "y0", "y0_se"]);
    br.push(vec!["minimal".into(), String::new(), num(minimal.y0()), num(minimal.y0_se())]);
    for (n, y0, se) in &maximal.estimates {
        br.push(vec!["maximal".into(), num(*n), num(*y0), num(*se)]);
    }
    ctx.tables.push(br);
    let last = maximal.estimates.last().map(|e| e.1).unwrap_or(f64::NAN);
    ctx.summary("minimal_y0", minimal.y0());
    ctx.summary("maximal_y0", last);
    ctx.summary("maximal_extrapolated_y0", maximal.extrapolated_y0);
    ctx.summary("maximal_last_slope", maximal.estimates.last().map(|e| e.0).unwrap_or(f64::NAN));
    ctx.verdicts.push(Verdict::at_most("minimal_bracket", "|minimal y0 - 0|", minimal.y0().abs(), 1e-8));
    ctx.verdicts.push(Verdict::at_most("maximal_bracket", "|maximal y0 - T^2/4|", (last - top).abs(), bracket_tol));
    Ok(())
}

fn duality(ctx: &mut Ctx) -> Result<(), ExperimentError> {
    let cfg = ctx.cfg;
    let family = cfg.controls("0.3 0.4 0.5 0.6 feedback")?;
    let gap_tol = cfg.param_or("gap_tol", 1e-3)?;
    let margin = cfg.param_or("strict_margin", 1e-2)?;
    let expected: Option<f64> = cfg.param("expected")?;
    let ens = ctx.ensemble(cfg.steps, cfg.deterministic)?;
    let xi = cfg.terminal.sample(&ens)?;
    let opts = ctx.options_for(&cfg.terminal);
    let rep = duality_gap(&cfg.generator, &xi, &ens, &family, &opts)?;
    let mut t = Table::new("controls", &["control", "y0_control", "y0_primal", "gap"]);
    let mut strict = f64::INFINITY;
    for spec in &family {
        let label = spec.label();
        let Some(v) = rep.y0_per_control.get(&label) else {
            t.push(vec![label, String::new(), num(rep.y0_primal), String::new()]);
            continue;
        };
        t.push(vec![label, num(*v), num(rep.y0_primal), num(v - rep.y0_primal)]);
        if matches!(spec, ControlSpec::Constant(_)) {
            strict = strict.min(v - rep.y0_primal);
        }
    }
    ctx.tables.push(t);
    ctx.summary("y0_primal", rep.y0_primal);
    ctx.summary("gap_min", rep.gap_min);
    ctx.summary("inadmissible_controls", rep.inadmissible.len() as f64);
    if let Some(r) = rep.tangency_residual {
        ctx.summary("tangency_residual", r);
    }
    if let Some(e) = expected {
        ctx.verdicts.push(Verdict::at_most("primal_matches_expected", "|Y_0 - expected|", (rep.y0_primal - e).abs(), gap_tol));
    }
    ctx.verdicts.push(Verdict::at_least(
        "weak_duality",
        "min_q (Y^q_0 - Y_0) + three standard errors",
        rep.gap_min + rep.tolerance,
        -gap_tol,
    ));
    if let Some(e) = rep.feedback_match_error {
        ctx.verdicts.push(Verdict::at_most("feedback_attains", "|Y^{q*}_0 - Y_0|", e, gap_tol + rep.tolerance));
    }
    if strict.is_finite() {
        ctx.verdicts.push(Verdict::at_least("constant_controls_strict", "min over constant q of Y^q_0 - Y_0", strict, margin));
    }
    Ok(())
}

fn transform_instances(cfg: &ExperimentConfig) -> Result<Vec<(String, SpecialGenerator)>, ExperimentError> {
    if let Some(sg) = &cfg.special {
        return Ok(vec![("config".into(), sg.clone())]);
    }
    let alphas = cfg.param_list("alphas", &[0.25, 0.5, 0.75])?;
    let mut out = Vec::new();
    for a in alphas {
        for (name, k) in [("power", [1.0, 0.0, 0.0, 0.0]), ("mixed", [1.0, -0.5, 0.3, 0.2])] {
            out.push((format!("a={a} {name}"), SpecialGenerator::with_constants(a, cfg.horizon, k)));
        }
    }
    Ok(out)
}

fn transform(ctx: &mut Ctx) -> Result<(), ExperimentError> {
    let cfg = ctx.cfg;
    let det_steps = cfg.param_or("deterministic_steps", 1000usize)?;
    let det_tol = cfg.param_or("deterministic_tol", 1e-3)?;
    let stoch_tol = cfg.param_or("stochastic_rel_tol", 0.02)?;
    let thetas = cfg.param_list("thetas", &[0.5, 0.9, 0.99])?;
    let budget = cfg.param_or("theta_budget", 100_000usize)?;
    let theta_tol = cfg.param_or("theta_tol", 1e-9)?;
    let det_xi = cfg.param_or("deterministic_terminal", 1.0)?;
    let instances = transform_instances(cfg)?;
    let det_ens = PathEnsemble::deterministic(ctx.grid(det_steps)?, cfg.dim);
    let stoch_ens = ctx.ensemble(cfg.steps, cfg.deterministic)?;
    let xi = cfg.terminal.sample(&stoch_ens)?;
    let opts = ctx.options_for(&cfg.terminal);
    let mut t = Table::new(
        "instances",
        &[
            "instance",
            "mode",
            "direct_y0",
            "via_transform_y0",
            "max_discrepancy",
            "max_relative_discrepancy",
            "rms_relative_discrepancy",
            "mean_relative_discrepancy",
        ],
    );
    let mut theta = Table::new("theta", &["instance", "samples_per_theta", "max_violation"]);
    let (mut det_worst, mut stoch_worst, mut theta_worst) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for (name, sg) in &instances {
        let det = solve_special(sg, &[det_xi], &det_ens, &ctx.opts)?;
        det_worst = det_worst.max(det.max_discrepancy);
        t.push(vec![
            name.clone(),
            "deterministic".into(),
            num(det.direct.y0()),
            num(det.via_transform.y0()),
            num(det.max_discrepancy),
            num(det.max_relative_discrepancy),
            num(det.rms_relative_discrepancy),
            num(det.mean_relative_discrepancy),
        ]);
        let st = solve_special(sg, &xi, &stoch_ens, &opts)?;
        stoch_worst = stoch_worst.max(st.rms_relative_discrepancy);
        t.push(vec![
            name.clone(),
            "stochastic".into(),
            num(st.direct.y0()),
            num(st.via_transform.y0()),
            num(st.max_discrepancy),
            num(st.max_relative_discrepancy),
            num(st.rms_relative_discrepancy),
            num(st.mean_relative_discrepancy),
        ]);
        let r = theta_difference_check(transformed_generator(sg), cfg.horizon, cfg.dim, &thetas, budget, cfg.seed)?;
        theta_worst = theta_worst.max(r.max_violation);
        theta.push(vec![name.clone(), budget.to_string(), num(r.max_violation)]);
    }
    let neg = theta_difference_check(|_s: &_, y: f64, _z: &[f64]| y.sqrt(), cfg.horizon, cfg.dim, &thetas, budget, cfg.seed)?;
    theta.push(vec!["negative control sqrt(y)".into(), budget.to_string(), num(neg.max_violation)]);
    ctx.tables.push(t);
    ctx.tables.push(theta);
    ctx.verdicts.push(Verdict::at_most("deterministic_equivalence", "sup |Y_direct - Y_via|", det_worst, det_tol));
    ctx.verdicts.push(Verdict::at_most(
        "stochastic_equivalence",
        "max_t rms over paths of (Y_direct - Y_via) / Y_direct",
        stoch_worst,
        stoch_tol,
    ));
    ctx.verdicts.push(Verdict::at_most("theta_difference", "max normalized theta-difference violation", theta_worst, theta_tol));
    ctx.verdicts.push(Verdict::at_least("theta_negative_control", "violation for concave sqrt(y)", neg.max_violation, 1e-2));
    Ok(())
}

fn ez_utility(ctx: &mut Ctx) -> Result<(), ExperimentError> {
    let cfg = ctx.cfg;
    let ez = cfg.ez.ok_or_else(|| ConfigError::MissingSection("ez".into()))?;
    let rel_tol = cfg.param_or("rel_tol", 0.01)?;
    let stat_tol = cfg.param_or("stationary_tol", 1e-8)?;
    let expected: Option<f64> = cfg.param("expected")?;
    let deterministic = cfg.deterministic || cfg.terminal.as_constant().is_some();
    let ens = ctx.ensemble(cfg.steps, deterministic)?;
    let xi = cfg.terminal.sample(&ens)?;
    let opts = ctx.options_for(&cfg.terminal);
    let grid = *ens.grid();
    let (direct, via) = if ez.is_peano() {
        let sg = ez_to_special(&ez, cfg.horizon)?;
        let s = solve_special(&sg, &xi, &ens, &opts)?;
        ctx.summary("max_discrepancy", s.max_discrepancy);
        (s.direct, Some(s.via_transform))
    } else {
        (solve_backward_euler(&EzGenerator(ez), &xi, &ens, &opts)?, None)
    };
    ctx.summary("y0_direct", direct.y0());
    if let Some(v) = &via {
        ctx.summary("y0_via_transform", v.y0());
    }
    let mut t = Table::new("utility", &["step", "t", "direct_mean", "via_transform_mean", "closed_form"]);
    let closed = cfg.terminal.as_constant();
    let mut worst = 0.0f64;
    for i in 0..=grid.steps() {
        let cf = match closed {
            Some(x) => Some(ez_closed_form(&ez, x, grid.time(i), grid.horizon())?),
            None => None,
        };
        let d = direct.mean_at(i);
        let v = via.as_ref().map(|v| v.mean_at(i));
        if let Some(c) = cf {
            worst = worst.max(((d - c) / c).abs());
            if let Some(v) = v {
                worst = worst.max(((v - c) / c).abs());
            }
        }
        t.push(vec![i.to_string(), num(grid.time(i)), num(d), v.map(num).unwrap_or_default(), cf.map(num).unwrap_or_default()]);
    }
    ctx.tables.push(t);
    if let Some(x) = closed {
        let c0 = ez_closed_form(&ez, x, 0.0, grid.horizon())?;
        ctx.summary("closed_form_y0", c0);
        ctx.verdicts.push(Verdict::at_most("closed_form_agreement", "sup_t |Y_t - closed form| / closed form", worst, rel_tol));
        if let Some(e) = expected {
            ctx.verdicts.push(Verdict::at_most("expected_value", "|Y_0 - expected| / expected", ((direct.y0() - e) / e).abs(), rel_tol));
        }
    } else if let Some(v) = &via {
        let d = ((direct.y0() - v.y0()) / direct.y0()).abs();
        ctx.verdicts.push(Verdict::at_most("transform_agreement", "|Y_0 direct - Y_0 via| / Y_0", d, 2.0 * rel_tol));
    }
    if ez.c > 0.0 {
        let det = PathEnsemble::deterministic(grid, cfg.dim);
        let sol = if ez.is_peano() {
            solve_special(&ez_to_special(&ez, cfg.horizon)?, &[ez.c], &det, &ctx.opts)?.direct
        } else {
            solve_backward_euler(&EzGenerator(ez), &[ez.c], &det, &ctx.opts)?
        };
        let dev = sol.y.data().iter().fold(0.0f64, |a, y| a.max((y - ez.c).abs()));
        ctx.verdicts.push(Verdict::at_most("stationary_endowment", "sup_t |Y_t - c| with xi = c", dev, stat_tol));
    }
    let max_paths = ctx.csv_paths()?;
    ctx.tables.push(solution_table("solution", &direct, max_paths));
    Ok(())
}

fn audit(ctx: &mut Ctx) -> Result<(), ExperimentError> {
    let cfg = ctx.cfg;
    let budget = cfg.param_or("audit_budget", 10_000usize)?;
    let mut t = Table::new("audit", &["assumption", "check", "worst_slack", "pass"]);
    if cfg.generator.concave.is_some() {
        let rep = assumption_audit(&cfg.generator, budget, &audit_box(cfg), cfg.seed)?;
        ctx.summary("samples", rep.samples as f64);
        for c in &rep.checks {
            t.push(vec![c.assumption.clone(), c.name.clone(), num(c.worst_slack), c.pass.to_string()]);
            ctx.verdicts.push(Verdict::at_most(&c.name, &format!("{} {}", c.assumption, c.name), c.worst_slack, AUDIT_TOL));
        }
    }
    if let Some(sg) = &cfg.special {
        let norm = sg.norm.audit(cfg.dim, budget, cfg.seed);
        t.push(vec!["special".into(), "norm_homogeneity".into(), num(norm.homogeneity), (norm.homogeneity <= AUDIT_TOL).to_string()]);
        t.push(vec!["special".into(), "norm_convexity".into(), num(norm.convexity), (norm.convexity <= AUDIT_TOL).to_string()]);
        ctx.verdicts.push(Verdict::at_most("norm_homogeneity", "|N(l z) - l N(z)|", norm.homogeneity, AUDIT_TOL));
        ctx.verdicts.push(Verdict::at_most("norm_convexity", "N midpoint convexity slack", norm.convexity, AUDIT_TOL));
    }
    ctx.tables.push(t);
    Ok(())
}

fn lower_bound(ctx: &mut Ctx) -> Result<(), ExperimentError> {
    let cfg = ctx.cfg;
    let tight_tol = cfg.param_or("tight_tol", 1e-6)?;
    let det_xi = cfg.param_or("deterministic_terminal", 1.0)?;
    let ens = ctx.ensemble(cfg.steps, cfg.deterministic)?;
    let xi = cfg.terminal.sample(&ens)?;
    let opts = ctx.options_for(&cfg.terminal);
    let sol = primal_solution(&cfg.generator, &xi, &ens, &opts)?;
    let cert = lower_bound_certificate(&cfg.generator, &xi, &ens, &sol, &opts)?;
    let grid = sol.grid;
    let mut t = Table::new("bound", &["step", "t", "y_mean", "bound_mean", "min_margin", "bound_se", "y_se"]);
    for i in 0..=grid.steps() {
        let ys = sol.y.row(i);
        let bs = cert.bound.row(i);
        let margin = ys.iter().zip(bs).fold(f64::INFINITY, |a, (y, b)| a.min(y - b));
        t.push(vec![
            i.to_string(),
            num(grid.time(i)),
            num(sol.mean_at(i)),
            num(crate::exec::mean(bs)),
            num(margin),
            num(cert.bound_se[i]),
            num(sol.y_se[i]),
        ]);
    }
    ctx.tables.push(t);
    ctx.summary("y0", sol.y0());
    ctx.summary("bound_t0", cert.bound_t0);
    ctx.summary("eta", cert.eta);
    ctx.summary("worst_margin", cert.worst_margin);
    ctx.summary("clamped_drifts", cert.clamped_drifts as f64);
    ctx.verdicts.push(Verdict::at_most(
        "bound_holds",
        "nodes with Y below the bound by more than three standard errors",
        cert.violations as f64,
        0.0,
    ));
    let spec = &cfg.generator;
    let exact = spec.only_concave()
        && spec.concave.as_ref().is_some_and(|c| c.additive.is_constant() && c.shift.is_constant())
        && spec.phi.is_none();
    if exact {
        let det = PathEnsemble::deterministic(grid, cfg.dim);
        let dsol = primal_solution(spec, &[det_xi], &det, &ctx.opts)?;
        let dcert = lower_bound_certificate(spec, &[det_xi], &det, &dsol, &ctx.opts)?;
        let gap = dsol.y.data().iter().zip(dcert.bound.data()).fold(0.0f64, |a, (y, b)| a.max((y - b).abs()));
        ctx.summary("deterministic_y0", dsol.y0());
        ctx.summary("deterministic_bound_t0", dcert.bound_t0);
        ctx.verdicts.push(Verdict::at_most("bound_tight_deterministic", "sup_t |Y_t - bound_t|, deterministic xi", gap, tight_tol));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub scenario: Scenario,
    pub checks: Vec<Verdict>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            3
        }
    }
}

fn ok_verdict(name: &str, invariant: &str, res: Result<(), String>) -> Verdict {
    let pass = res.is_ok();
    Verdict {
        name: name.into(),
        invariant: res.err().map_or_else(|| invariant.to_string(), |e| format!("{invariant}: {e}")),
        value: if pass { 0.0 } else { 1.0 },
        comparison: "<=".into(),
        tolerance: 0.0,
        pass,
    }
}

/// Audits and admissibility pre-checks without solving.
pub fn validate(cfg: &ExperimentConfig) -> Result<ValidationReport, ExperimentError> {
    let mut checks = Vec::new();
    checks.push(ok_verdict("terminal_valid", "terminal spec is admissible", cfg.terminal.validate().map_err(|e| e.to_string())));
    if cfg.generator.concave.is_some() {
        let budget = cfg.param_or("audit_budget", 10_000usize)?;
        let rep = assumption_audit(&cfg.generator, budget, &audit_box(cfg), cfg.seed)?;
        for c in &rep.checks {
            checks.push(Verdict::at_most(&c.name, &format!("{} {}", c.assumption, c.name), c.worst_slack, AUDIT_TOL));
        }
    }
    if let Some(ez) = &cfg.ez {
        let res = ez.validate().map_err(|e| e.to_string());
        let res = res.and_then(|_| {
            if cfg.scenario == Scenario::EzUtility && !ez.is_peano() {
                Ok(())
            } else {
                ez_to_special(ez, cfg.horizon).map(|_| ()).map_err(|e| e.to_string())
            }
        });
        checks.push(ok_verdict("ez_parameter_range", "beta > 0, c >= 0, rho in (0, 1)", res));
    }
    if let Some(sg) = &cfg.special {
        checks.push(ok_verdict("special_coefficients", "0 < a < 1 and coefficient bounds", sg.validate().map_err(|e| e.to_string())));
        let norm = sg.norm.audit(cfg.dim, 2000, cfg.seed);
        checks.push(Verdict::at_most("norm_homogeneity", "|N(l z) - l N(z)|", norm.homogeneity, AUDIT_TOL));
    }
    if cfg.params.contains_key("controls") && cfg.generator.concave.is_some() {
        let family = cfg.controls("")?;
        let grid = TimeGrid::new(cfg.horizon, cfg.steps)?;
        let ens = if cfg.deterministic {
            PathEnsemble::deterministic(grid, cfg.dim)
        } else {
            PathEnsemble::simulate(grid, cfg.paths.min(1000), cfg.dim, cfg.seed, Execution::default())?
        };
        for spec in family.iter().filter(|s| !matches!(s, ControlSpec::Feedback)) {
            let q = match spec {
                ControlSpec::Constant(v) => ControlProcess::constant(&ens, *v)?,
                ControlSpec::Piecewise { breakpoints, values } => ControlProcess::piecewise(&ens, breakpoints, values)?,
                ControlSpec::Feedback => unreachable!(),
            };
            let res = admissibility_check(&cfg.generator, &q, &ens, 2.0, 4.0)
                .map_err(|e| e.to_string())
                .and_then(|m| if m.finite && !m.heavy_tail { Ok(()) } else { Err("moments not finite".into()) });
            checks.push(ok_verdict(&format!("admissible {}", spec.label()), "finite exponential and conjugate moments", res));
        }
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(ValidationReport { scenario: cfg.scenario, checks, pass })
}
