//! INI experiment configs.
//!
//! ```ini
//! [experiment]
//! scenario = uniqueness_convergence
//! seed = 7
//!
//! [grid]
//! horizon = 1
//! steps = 200
//!
//! [ensemble]
//! paths = 10000
//!
//! [generator]
//! rho = sqrt
//!
//! [terminal]
//! spec = constant value=1
//! ```

use crate::dual::ControlSpec;
use crate::engine::TerminalSpec;
use crate::peano::PeanoFunction;
use crate::solver::{Coef, ConcavePart, GeneratorSpec, LipschitzPart, MonotonePart};
use crate::transform::{EzParams, SpecialGenerator, ZNorm};
use ini::Ini;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("[{section}] {key}: {message}")]
    Value { section: String, key: String, message: String },
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("[{0}] is required for this scenario")]
    MissingSection(String),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    UniquenessConvergence,
    MultiplicityZoo,
    DualityFrontier,
    TransformCrosscheck,
    EzUtility,
    AssumptionAudit,
    LowerBound,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::UniquenessConvergence,
        Scenario::MultiplicityZoo,
        Scenario::DualityFrontier,
        Scenario::TransformCrosscheck,
        Scenario::EzUtility,
        Scenario::AssumptionAudit,
        Scenario::LowerBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::UniquenessConvergence => "uniqueness_convergence",
            Scenario::MultiplicityZoo => "multiplicity_zoo",
            Scenario::DualityFrontier => "duality_frontier",
            Scenario::TransformCrosscheck => "transform_crosscheck",
            Scenario::EzUtility => "ez_utility",
            Scenario::AssumptionAudit => "assumption_audit",
            Scenario::LowerBound => "lower_bound",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| ConfigError::UnknownScenario(s.trim().to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub horizon: f64,
    pub steps: usize,
    pub paths: usize,
    pub dim: usize,
    /// Run on the single frozen path `B = 0`.
    pub deterministic: bool,
    pub generator: GeneratorSpec,
    pub terminal: TerminalSpec,
    pub ez: Option<EzParams>,
    pub special: Option<SpecialGenerator>,
    /// Scenario-specific keys from `[scenario]`.
    pub params: BTreeMap<String, String>,
    /// Every key as read, for the report.
    pub echo: BTreeMap<String, String>,
}

fn value_err(section: &str, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Value { section: section.into(), key: key.into(), message: message.into() }
}

struct Section<'a> {
    name: &'a str,
    props: BTreeMap<String, String>,
}

impl<'a> Section<'a> {
    fn new(ini: &Ini, name: &'a str) -> Self {
        let props = ini
            .section(Some(name))
            .map(|p| p.iter().map(|(k, v)| (k.trim().to_string(), v.trim().to_string())).collect())
            .unwrap_or_default();
        Section { name, props }
    }

    fn present(&self) -> bool {
        !self.props.is_empty()
    }

    fn text(&self, key: &str) -> Option<&str> {
        self.props.get(key).map(String::as_str)
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.text(key)
            .map(|v| v.parse::<T>().map_err(|e| value_err(self.name, key, format!("'{v}': {e}"))))
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }
}

/// Comma- or whitespace-separated numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("bad number '{t}'")))
        .collect()
}

/// Whitespace-separated controls such as `0.3 piecewise(0.5|0.6,0.4) feedback`.
pub fn parse_controls(s: &str) -> Result<Vec<ControlSpec>, String> {
    s.split_whitespace().map(|t| t.parse::<ControlSpec>().map_err(|e| e.to_string())).collect()
}

fn parse_monotone(s: &str) -> Result<MonotonePart, String> {
    match s {
        "zero" | "none" => Ok(MonotonePart::Zero),
        "root_deficit" => Ok(MonotonePart::RootDeficit),
        "oscillating_barrier" => Ok(MonotonePart::OscillatingBarrier),
        other => Err(format!("unknown monotone part '{other}'")),
    }
}

fn parse_norm(s: &str) -> Result<ZNorm, String> {
    match s {
        "euclidean" | "l2" => Ok(ZNorm::Euclidean),
        "l1" => Ok(ZNorm::L1),
        "max" | "linf" => Ok(ZNorm::Max),
        other => Err(format!("unknown norm '{other}'")),
    }
}

fn coef(sec: &Section, key: &str) -> Result<Option<Coef>, ConfigError> {
    sec.parse::<Coef>(key)
}

fn generator_from(sec: &Section, horizon: f64) -> Result<GeneratorSpec, ConfigError> {
    let mut spec = GeneratorSpec::new(horizon);
    if let Some(rho) = sec.text("rho") {
        if rho != "none" {
            let f: PeanoFunction = if rho == "sqrt" {
                PeanoFunction::sqrt()
            } else {
                rho.parse().map_err(|e| value_err(sec.name, "rho", format!("{e}")))?
            };
            let mut part = ConcavePart::new(f);
            part.multiplier = sec.or("multiplier", 1.0)?;
            part.scale = sec.or("scale", 1.0)?;
            part.shift = coef(sec, "shift")?.unwrap_or_default();
            part.additive = coef(sec, "additive")?.unwrap_or_default();
            spec.concave = Some(part);
        }
    }
    if let Some(m) = sec.text("monotone") {
        spec.monotone = parse_monotone(m).map_err(|e| value_err(sec.name, "monotone", e))?;
    }
    let z_lin = match sec.text("lipschitz_zlin") {
        Some(v) => parse_list(v).map_err(|e| value_err(sec.name, "lipschitz_zlin", e))?,
        None => Vec::new(),
    };
    spec.lipschitz = LipschitzPart { y_coef: sec.or("lipschitz_y", 0.0)?, z_abs: sec.or("lipschitz_z", 0.0)?, z_lin };
    if let Some(phi) = sec.text("phi") {
        spec.phi = Some(phi.parse().map_err(|e| value_err(sec.name, "phi", format!("{e}")))?);
    }
    spec.floor = coef(sec, "floor")?;
    spec.c = sec.parse("c")?;
    spec.cap = coef(sec, "cap")?;
    spec.beta = sec.parse("beta")?;
    spec.lambda = sec.or("lambda", 1.0)?;
    spec.beta_bar = sec.parse("beta_bar")?;
    spec.monotone_cap = coef(sec, "monotone_cap")?;
    spec.beta_tilde = sec.parse("beta_tilde")?;
    spec.gamma = sec.parse("gamma")?;
    Ok(spec)
}

fn special_from(sec: &Section, horizon: f64) -> Result<SpecialGenerator, ConfigError> {
    let alpha: f64 = sec.parse("alpha")?.ok_or_else(|| value_err(sec.name, "alpha", "missing"))?;
    let mut sg = SpecialGenerator::new(alpha, horizon);
    sg.k1 = coef(sec, "k1")?.unwrap_or_default();
    sg.k2 = coef(sec, "k2")?.unwrap_or_default();
    sg.k3 = coef(sec, "k3")?.unwrap_or_default();
    sg.k4 = coef(sec, "k4")?.unwrap_or_default();
    let default_bound = 1f64.max(sg.k2.constant.abs()).max(sg.k3.constant);
    sg.bound = sec.or("bound", default_bound)?;
    if let Some(n) = sec.text("norm") {
        sg.norm = parse_norm(n).map_err(|e| value_err(sec.name, "norm", e))?;
    }
    Ok(sg)
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        text.parse()
    }

    /// Typed lookup in `[scenario]`.
    pub fn param<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.params
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| value_err("scenario", key, format!("'{v}': {e}"))))
            .transpose()
    }

    pub fn param_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.param(key)?.unwrap_or(default))
    }

    pub fn param_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.params.get(key) {
            Some(v) => parse_list(v).map_err(|e| value_err("scenario", key, e)),
            None => Ok(default.to_vec()),
        }
    }

    pub fn controls(&self, default: &str) -> Result<Vec<ControlSpec>, ConfigError> {
        let text = self.params.get("controls").map(String::as_str).unwrap_or(default);
        parse_controls(text).map_err(|e| value_err("scenario", "controls", e))
    }
}

impl FromStr for ExperimentConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let known = ["experiment", "grid", "ensemble", "generator", "terminal", "scenario", "ez", "special"];
        for name in ini.sections().flatten() {
            if !known.contains(&name) {
                return Err(ConfigError::Syntax(format!("unknown section [{name}]")));
            }
        }
        let mut echo = BTreeMap::new();
        for (name, props) in ini.iter() {
            if let Some(name) = name {
                for (k, v) in props.iter() {
                    echo.insert(format!("{name}.{}", k.trim()), v.trim().to_string());
                }
            }
        }
        let exp = Section::new(&ini, "experiment");
        let scenario: Scenario = exp
            .text("scenario")
            .ok_or_else(|| value_err("experiment", "scenario", "missing"))?
            .parse()?;
        let seed = exp.or("seed", 0u64)?;
        let output = exp.text("output").map(PathBuf::from);

        let grid = Section::new(&ini, "grid");
        let horizon: f64 = grid.or("horizon", 1.0)?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(value_err("grid", "horizon", "must be positive"));
        }
        let steps: usize = grid.or("steps", 100)?;
        if steps == 0 {
            return Err(value_err("grid", "steps", "must be positive"));
        }

        let ens = Section::new(&ini, "ensemble");
        let paths: usize = ens.or("paths", 10_000)?;
        let dim: usize = ens.or("dim", 1)?;
        let deterministic: bool = ens.or("deterministic", false)?;
        if paths == 0 || dim == 0 {
            return Err(value_err("ensemble", "paths", "paths and dim must be positive"));
        }

        let generator = generator_from(&Section::new(&ini, "generator"), horizon)?;
        let term = Section::new(&ini, "terminal");
        let terminal = match term.text("spec") {
            Some(s) => s.parse::<TerminalSpec>().map_err(|e| value_err("terminal", "spec", e.to_string()))?,
            None => TerminalSpec::Constant(1.0),
        };

        let ez_sec = Section::new(&ini, "ez");
        let ez = if ez_sec.present() {
            Some(EzParams {
                beta: ez_sec.or("beta", 1.0)?,
                c: ez_sec.or("c", 1.0)?,
                rho: ez_sec.or("rho", 0.5)?,
            })
        } else {
            None
        };
        let sp = Section::new(&ini, "special");
        let special = if sp.present() { Some(special_from(&sp, horizon)?) } else { None };
        let params = Section::new(&ini, "scenario").props;

        Ok(ExperimentConfig {
            scenario,
            seed,
            output,
            horizon,
            steps,
            paths,
            dim,
            deterministic,
            generator,
            terminal,
            ez,
            special,
            params,
            echo,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = "[experiment]\nscenario = duality_frontier\nseed = 11\n\n[grid]\nhorizon = 2\nsteps = 40\n\n\
                    [ensemble]\npaths = 500\ndeterministic = true\n\n[generator]\nrho = sqrt\nlipschitz_y = 0.5\n\
                    beta_tilde = 0.5\nadditive = 1 + 0.5*t\n\n[terminal]\nspec = lognormal m=1 sigma=0.2\n\n\
                    [scenario]\ncontrols = 0.3 feedback\n";
        let cfg: ExperimentConfig = text.parse().unwrap();
        assert_eq!(cfg.scenario, Scenario::DualityFrontier);
        assert_eq!((cfg.seed, cfg.steps, cfg.paths), (11, 40, 500));
        assert!(cfg.deterministic);
        assert_eq!(cfg.generator.lipschitz.y_coef, 0.5);
        assert_eq!(cfg.generator.concave.as_ref().unwrap().additive.time, 0.5);
        assert_eq!(cfg.controls("").unwrap(), vec![ControlSpec::Constant(0.3), ControlSpec::Feedback]);
        assert_eq!(cfg.echo["grid.horizon"], "2");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!("[experiment]\nscenario = nope\n".parse::<ExperimentConfig>(), Err(ConfigError::UnknownScenario(_))));
        assert!("[experiment]\nscenario = ez_utility\n[grid]\nsteps = -3\n".parse::<ExperimentConfig>().is_err());
        assert!("[experiment]\nscenario = ez_utility\n[bogus]\nx = 1\n".parse::<ExperimentConfig>().is_err());
        assert!("[experiment]\nscenario = ez_utility\n[generator]\nrho = family=unknown\n".parse::<ExperimentConfig>().is_err());
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
    }
}
