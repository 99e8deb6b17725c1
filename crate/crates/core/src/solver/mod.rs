//! Backward solvers for `Y_t = xi + ∫ g(s, Y, Z) ds - ∫ Z dB` with a
//! generator of Peano type.

mod backward;
mod generator;
mod maximal;

pub(crate) use backward::regress_step;

pub use backward::{
    deterministic_restriction, solve_backward_euler, solve_deterministic_ode, solve_truncated_picard, OdeSolution,
    TruncatedGenerator,
};
pub use generator::{
    assumption_audit, AuditBox, AuditCheck, AuditReport, Coef, ConcavePart, FnGenerator, Generator, GeneratorSpec,
    LipschitzPart, MonotonePart, PointState, AUDIT_TOL,
};
pub use maximal::{
    apriori_diagnostic, maximal_solution, multiplicity_family, sup_convolution, AprioriReport, LipschitzEnvelope,
    MaximalSolution, MultiplicityPath, DEFAULT_SCHEDULE,
};

use crate::engine::{BasisSpec, EngineError, Field, TimeGrid};
use crate::exec::{self, Execution};
use crate::peano::PeanoError;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Peano(#[from] PeanoError),
    #[error("implicit step did not converge at step {step}, path {path}: residual {residual:e}")]
    FixedPointDivergence { step: usize, path: usize, residual: f64 },
    #[error("Picard iteration stopped after {sweeps} sweeps with sup difference {difference:e}")]
    PicardNotConverged { sweeps: usize, difference: f64 },
    #[error("ODE refinement did not reach the tolerance: {0}")]
    OdeNotConverged(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("maximal-solution sequence increased from {previous} to {current} at n = {n}")]
    NonMonotone { n: f64, previous: f64, current: f64 },
    #[error("sup-convolution is infinite: {0}")]
    DivergentSup(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("terminal value has {got} entries for {paths} paths")]
    TerminalMismatch { got: usize, paths: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub basis: BasisSpec,
    /// Iterations of the implicit step before giving up.
    pub fixed_point_iterations: usize,
    pub fixed_point_tol: f64,
    pub picard_tol: f64,
    pub picard_max_sweeps: usize,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            basis: BasisSpec::default(),
            fixed_point_iterations: 20,
            fixed_point_tol: 1e-8,
            picard_tol: 1e-8,
            picard_max_sweeps: 200,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    /// Largest number of implicit iterations used at any node.
    pub max_fixed_point_iterations: usize,
    /// Steps where the regression fell back to the ridge penalty.
    pub degraded_steps: Vec<usize>,
    pub sweeps: Option<usize>,
    pub final_difference: Option<f64>,
    /// Share of nodes with `Y` below the truncation level.
    pub below_truncation: Option<f64>,
}

/// `Y` on `N + 1` times and `Z` on `N` times, per path.
#[derive(Debug, Clone)]
pub struct SolutionField {
    pub grid: TimeGrid,
    pub y: Field,
    pub z: Field,
    /// Standard error of the conditional-expectation fit at each step.
    pub y_se: Vec<f64>,
    pub diagnostics: SolverDiagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub y0: f64,
    pub y0_se: f64,
    pub steps: usize,
    pub paths: usize,
    pub horizon: f64,
    pub diagnostics: SolverDiagnostics,
}

impl SolutionField {
    /// Sample mean of `Y_0` (all paths agree when the scheme is adapted).
    pub fn y0(&self) -> f64 {
        exec::mean(self.y.row(0))
    }

    pub fn y0_se(&self) -> f64 {
        self.y_se.first().copied().unwrap_or(0.0)
    }

    pub fn y_at(&self, i: usize, m: usize) -> f64 {
        self.y.scalar(i, m)
    }

    /// Mean of `Y_i` over paths.
    pub fn mean_at(&self, i: usize) -> f64 {
        exec::mean(self.y.row(i))
    }

    pub fn min_y(&self) -> f64 {
        self.y.data().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn summary(&self) -> SolutionSummary {
        SolutionSummary {
            y0: self.y0(),
            y0_se: self.y0_se(),
            steps: self.grid.steps(),
            paths: self.y.paths(),
            horizon: self.grid.horizon(),
            diagnostics: self.diagnostics.clone(),
        }
    }

    /// `step,path,y,z_norm`; `z_norm` is empty at the horizon.
    pub fn write_csv<W: Write>(&self, out: W, max_paths: Option<usize>) -> Result<(), SolverError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "path", "y", "z_norm"])?;
        let n = self.grid.steps();
        let paths = max_paths.map_or(self.y.paths(), |p| p.min(self.y.paths()));
        for i in 0..=n {
            for m in 0..paths {
                let z = if i < n { format!("{}", self.z.norm(i, m)) } else { String::new() };
                w.write_record([i.to_string(), m.to_string(), format!("{}", self.y.scalar(i, m)), z])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
