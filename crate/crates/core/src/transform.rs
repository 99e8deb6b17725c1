//! Power-type concave BSDEs with linear, `|z|` and constant terms, the
//! change of variables that turns them into convex quadratic BSDEs, and
//! Epstein-Zin utility as an instance.

use crate::engine::{EngineError, Field, PathEnsemble};
use crate::solver::{
    solve_backward_euler, Coef, Generator, PointState, SolutionField, SolverError, SolverOptions,
};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Same floor as the main solver, needed here because the transformed
/// generator is singular at zero.
pub const TRANSFORM_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("value must be positive at step {step}, path {path}: {value}")]
    NonpositiveY { step: usize, path: usize, value: f64 },
}

/// A positively homogeneous convex function of `z`.
#[derive(Clone, Default)]
pub enum ZNorm {
    #[default]
    Euclidean,
    L1,
    Max,
    Custom { name: String, f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> },
}

impl fmt::Debug for ZNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZNorm::Euclidean => f.write_str("euclidean"),
            ZNorm::L1 => f.write_str("l1"),
            ZNorm::Max => f.write_str("max"),
            ZNorm::Custom { name, .. } => write!(f, "custom({name})"),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormAudit {
    /// `max |N(l z) - l N(z)| / max(1, l N(z))`.
    pub homogeneity: f64,
    /// `max N((z1 + z2) / 2) - (N(z1) + N(z2)) / 2`.
    pub convexity: f64,
    pub negative: bool,
    pub pass: bool,
}

impl ZNorm {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            ZNorm::Euclidean => z.iter().map(|v| v * v).sum::<f64>().sqrt(),
            ZNorm::L1 => z.iter().map(|v| v.abs()).sum(),
            ZNorm::Max => z.iter().fold(0.0, |a, v| a.max(v.abs())),
            ZNorm::Custom { f, .. } => f(z),
        }
    }

    /// Sampled check of homogeneity, convexity and nonnegativity.
    pub fn audit(&self, dim: usize, budget: usize, seed: u64) -> NormAudit {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut homogeneity = 0.0f64;
        let mut convexity = f64::NEG_INFINITY;
        let mut negative = false;
        for _ in 0..budget {
            let z1: Vec<f64> = (0..dim).map(|_| 10.0 * (2.0 * uniform(&mut rng) - 1.0)).collect();
            let z2: Vec<f64> = (0..dim).map(|_| 10.0 * (2.0 * uniform(&mut rng) - 1.0)).collect();
            let l = 10f64.powf(4.0 * uniform(&mut rng) - 2.0);
            let n1 = self.eval(&z1);
            let scaled: Vec<f64> = z1.iter().map(|v| l * v).collect();
            homogeneity = homogeneity.max((self.eval(&scaled) - l * n1).abs() / (l * n1).max(1.0));
            let mid: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| 0.5 * (a + b)).collect();
            convexity = convexity.max(self.eval(&mid) - 0.5 * (n1 + self.eval(&z2)));
            negative |= n1 < 0.0;
        }
        let pass = homogeneity <= 1e-9 && convexity <= 1e-9 && !negative;
        NormAudit { homogeneity, convexity, negative, pass }
    }
}

fn uniform(rng: &mut ChaCha12Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// `g(t, y, z) = k1^{1-a} y^a + k2 y + k3 N(z) + k4` with `a` in `(0, 1)`,
/// `k1, k4 >= 0`, `|k2| <= bound` and `0 <= k3 <= bound`.
///
/// `k2` must be deterministic so that its integral is known in closed
/// form; the other coefficients may depend on `|B_t|`.
#[derive(Debug, Clone)]
pub struct SpecialGenerator {
    pub alpha: f64,
    pub bound: f64,
    pub k1: Coef,
    pub k2: Coef,
    pub k3: Coef,
    pub k4: Coef,
    pub norm: ZNorm,
    pub horizon: f64,
}

fn upper_bound(c: &Coef, horizon: f64) -> f64 {
    let neg = Coef { constant: -c.constant, time: -c.time, time_to_go: -c.time_to_go, abs_b: -c.abs_b };
    -neg.lower_bound(horizon)
}

impl SpecialGenerator {
    pub fn new(alpha: f64, horizon: f64) -> Self {
        SpecialGenerator {
            alpha,
            bound: 1.0,
            k1: Coef::default(),
            k2: Coef::default(),
            k3: Coef::default(),
            k4: Coef::default(),
            norm: ZNorm::Euclidean,
            horizon,
        }
    }

    pub fn with_constants(alpha: f64, horizon: f64, k: [f64; 4]) -> Self {
        let mut g = SpecialGenerator::new(alpha, horizon);
        g.k1 = Coef::constant(k[0]);
        g.k2 = Coef::constant(k[1]);
        g.k3 = Coef::constant(k[2]);
        g.k4 = Coef::constant(k[3]);
        g.bound = 1f64.max(k[1].abs()).max(k[2]);
        g
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        let bad = |m: String| Err(TransformError::InvalidParameter(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("exponent {} must lie in (0, 1)", self.alpha));
        }
        if !(self.bound > 0.0) {
            return bad(format!("coefficient bound {} must be positive", self.bound));
        }
        if !(self.horizon > 0.0) {
            return bad("horizon must be positive".into());
        }
        let h = self.horizon;
        if self.k1.lower_bound(h) < 0.0 || self.k4.lower_bound(h) < 0.0 {
            return bad("k1 and k4 must be nonnegative".into());
        }
        if self.k2.depends_on_path() {
            return bad("k2 must not depend on the path".into());
        }
        if self.k2.lower_bound(h) < -self.bound || upper_bound(&self.k2, h) > self.bound {
            return bad(format!("k2 must stay within [-{0}, {0}]", self.bound));
        }
        if self.k3.lower_bound(h) < 0.0 || upper_bound(&self.k3, h) > self.bound {
            return bad(format!("k3 must stay within [0, {}]", self.bound));
        }
        Ok(())
    }

    /// `∫_0^t k2(s) ds`.
    pub fn k2_integral(&self, t: f64) -> f64 {
        self.k2.integral_deterministic(t, self.horizon)
    }

    /// The generator of the original equation.
    pub fn direct(&self, s: &PointState, y: f64, z: &[f64]) -> f64 {
        let y = y.max(0.0);
        let k1 = self.k1.eval(s).max(0.0);
        k1.powf(1.0 - self.alpha) * y.powf(self.alpha)
            + self.k2.eval(s) * y
            + self.k3.eval(s) * self.norm.eval(z)
            + self.k4.eval(s)
    }

    /// The generator after the change of variables,
    /// `k1_bar^{1-a} + k3 N(z) + a / (2 (1 - a)) |z|^2 / y + k4_tilde y^{-a/(1-a)}`.
    pub fn transformed(&self, s: &PointState, y: f64, z: &[f64]) -> Result<f64, TransformError> {
        if !(y > 0.0) {
            return Err(TransformError::NonpositiveY { step: s.step, path: s.path, value: y });
        }
        Ok(self.transformed_floored(s, y, z))
    }

    fn transformed_floored(&self, s: &PointState, y: f64, z: &[f64]) -> f64 {
        let a = self.alpha;
        let y = y.max(TRANSFORM_FLOOR);
        let growth = self.k2_integral(s.t).exp();
        let k1_bar = growth * self.k1.eval(s).max(0.0);
        let k4 = self.k4.eval(s);
        let k4_tilde = if k4 == 0.0 { 0.0 } else { (1.0 - a).powf(-a / (1.0 - a)) * growth * k4 };
        let n = self.norm.eval(z);
        let z2: f64 = z.iter().map(|v| v * v).sum();
        let mut v = k1_bar.powf(1.0 - a) + self.k3.eval(s) * n;
        if z2 > 0.0 {
            v += a / (2.0 * (1.0 - a)) * z2 / y;
        }
        if k4_tilde != 0.0 {
            v += k4_tilde * y.powf(-a / (1.0 - a));
        }
        v
    }
}

struct Direct<'a>(&'a SpecialGenerator);
struct Transformed<'a>(&'a SpecialGenerator);

impl Generator for Direct<'_> {
    fn eval(&self, s: &PointState, y: f64, z: &[f64]) -> f64 {
        self.0.direct(s, y, z)
    }
}

impl Generator for Transformed<'_> {
    fn eval(&self, s: &PointState, y: f64, z: &[f64]) -> f64 {
        self.0.transformed_floored(s, y, z)
    }
}

/// `Y_bar = e^{∫k2} Y`, `Y_tilde = Y_bar^{1-a} / (1 - a)` and
/// `Z_tilde = e^{∫k2} Z / Y_bar^a`.
pub fn change_of_variables(sol: &SolutionField, sg: &SpecialGenerator) -> Result<SolutionField, TransformError> {
    let a = sg.alpha;
    let grid = sol.grid;
    let n = grid.steps();
    let m = sol.y.paths();
    let mut y = Field::zeros(n + 1, m, 1);
    let mut z = Field::zeros(n, m, sol.z.width());
    for i in 0..=n {
        let growth = sg.k2_integral(grid.time(i)).exp();
        for p in 0..m {
            let v = sol.y.scalar(i, p);
            if !(v > 0.0) {
                return Err(TransformError::NonpositiveY { step: i, path: p, value: v });
            }
            let bar = growth * v;
            y.get_mut(i, p)[0] = bar.powf(1.0 - a) / (1.0 - a);
            if i < n {
                let factor = growth / bar.powf(a);
                for (dst, src) in z.get_mut(i, p).iter_mut().zip(sol.z.get(i, p)) {
                    *dst = factor * src;
                }
            }
        }
    }
    Ok(SolutionField { grid, y, z, y_se: sol.y_se.clone(), diagnostics: sol.diagnostics.clone() })
}

/// Inverse of [`change_of_variables`].
pub fn inverse_change_of_variables(sol: &SolutionField, sg: &SpecialGenerator) -> Result<SolutionField, TransformError> {
    let a = sg.alpha;
    let grid = sol.grid;
    let n = grid.steps();
    let m = sol.y.paths();
    let mut y = Field::zeros(n + 1, m, 1);
    let mut z = Field::zeros(n, m, sol.z.width());
    for i in 0..=n {
        let shrink = (-sg.k2_integral(grid.time(i))).exp();
        for p in 0..m {
            let v = sol.y.scalar(i, p);
            if !(v > 0.0) {
                return Err(TransformError::NonpositiveY { step: i, path: p, value: v });
            }
            let bar = ((1.0 - a) * v).powf(1.0 / (1.0 - a));
            y.get_mut(i, p)[0] = shrink * bar;
            if i < n {
                let factor = shrink * bar.powf(a);
                for (dst, src) in z.get_mut(i, p).iter_mut().zip(sol.z.get(i, p)) {
                    *dst = factor * src;
                }
            }
        }
    }
    Ok(SolutionField { grid, y, z, y_se: sol.y_se.clone(), diagnostics: sol.diagnostics.clone() })
}

#[derive(Debug, Clone)]
pub struct SpecialSolution {
    pub direct: SolutionField,
    /// The transformed solve mapped back to the original variables.
    pub via_transform: SolutionField,
    pub max_discrepancy: f64,
    /// `max |direct - via| / |direct|`.
    pub max_relative_discrepancy: f64,
    /// `max_t sqrt(mean_paths ((direct - via) / direct)^2)`.
    pub rms_relative_discrepancy: f64,
    /// `max_t |mean direct - mean via| / |mean direct|`.
    pub mean_relative_discrepancy: f64,
}

/// Solve the original equation and the transformed one with the same
/// scheme on the same paths, and compare.
pub fn solve_special(
    sg: &SpecialGenerator,
    xi: &[f64],
    ens: &PathEnsemble,
    opts: &SolverOptions,
) -> Result<SpecialSolution, TransformError> {
    sg.validate()?;
    if let Some((p, v)) = xi.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(TransformError::NonpositiveY { step: ens.grid().steps(), path: p, value: *v });
    }
    let direct = solve_backward_euler(&Direct(sg), xi, ens, opts)?;
    let a = sg.alpha;
    let growth = sg.k2_integral(ens.grid().horizon()).exp();
    let xi_tilde: Vec<f64> = xi.iter().map(|v| (growth * v).powf(1.0 - a) / (1.0 - a)).collect();
    let tilde = solve_backward_euler(&Transformed(sg), &xi_tilde, ens, opts)?;
    let via_transform = inverse_change_of_variables(&tilde, sg)?;
    let mut max_discrepancy = 0.0f64;
    let mut max_relative_discrepancy = 0.0f64;
    for (d, v) in direct.y.data().iter().zip(via_transform.y.data()) {
        let diff = (d - v).abs();
        max_discrepancy = max_discrepancy.max(diff);
        max_relative_discrepancy = max_relative_discrepancy.max(diff / d.abs().max(1e-300));
    }
    let mut rms_relative_discrepancy = 0.0f64;
    let mut mean_relative_discrepancy = 0.0f64;
    for i in 0..=ens.grid().steps() {
        let (d, v) = (direct.y.row(i), via_transform.y.row(i));
        let sq: Vec<f64> = d.iter().zip(v).map(|(a, b)| ((a - b) / a.abs().max(1e-300)).powi(2)).collect();
        rms_relative_discrepancy = rms_relative_discrepancy.max(crate::exec::mean(&sq).sqrt());
        let (md, mv) = (crate::exec::mean(d), crate::exec::mean(v));
        mean_relative_discrepancy = mean_relative_discrepancy.max((md - mv).abs() / md.abs().max(1e-300));
    }
    Ok(SpecialSolution {
        direct,
        via_transform,
        max_discrepancy,
        max_relative_discrepancy,
        rms_relative_discrepancy,
        mean_relative_discrepancy,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaReport {
    pub samples: usize,
    pub thetas: Vec<f64>,
    /// Largest `(LHS - RHS) / max(1, |LHS|, |RHS|)`.
    pub max_violation: f64,
    /// `(theta, t, y1, y2, z1[0], z2[0])` at the worst sample.
    pub witness: Vec<f64>,
}

/// Sample `1{y1 > t y2} (g(y1, z1) - t g(y2, z2)) <= (1 - t) g(((y1 - t y2)/(1 - t))^+, (z1 - t z2)/(1 - t))`
/// for each `t` in the grid.
pub fn theta_difference_check<F>(
    g: F,
    horizon: f64,
    dim: usize,
    thetas: &[f64],
    budget: usize,
    seed: u64,
) -> Result<ThetaReport, TransformError>
where
    F: Fn(&PointState, f64, &[f64]) -> f64,
{
    if thetas.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(TransformError::InvalidParameter("every theta must lie in (0, 1)".into()));
    }
    if budget < 100_000 {
        return Err(TransformError::InvalidParameter(format!("budget {budget} is below 100000")));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut max_violation = f64::NEG_INFINITY;
    let mut witness = Vec::new();
    let dim = dim.max(1);
    let b = vec![0.0; dim];
    for &theta in thetas {
        for _ in 0..budget {
            let t = horizon * uniform(&mut rng);
            let s = PointState { t, horizon, step: 0, path: 0, b: &b };
            let y1 = 10f64.powf(4.0 * uniform(&mut rng) - 2.0);
            let y2 = 10f64.powf(4.0 * uniform(&mut rng) - 2.0);
            let z1: Vec<f64> = (0..dim).map(|_| 4.0 * (2.0 * uniform(&mut rng) - 1.0)).collect();
            let z2: Vec<f64> = (0..dim).map(|_| 4.0 * (2.0 * uniform(&mut rng) - 1.0)).collect();
            if !(y1 > theta * y2) {
                continue;
            }
            let lhs = g(&s, y1, &z1) - theta * g(&s, y2, &z2);
            let yh = (y1 - theta * y2) / (1.0 - theta);
            let zh: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| (a - theta * b) / (1.0 - theta)).collect();
            let rhs = (1.0 - theta) * g(&s, yh, &zh);
            let v = (lhs - rhs) / 1f64.max(lhs.abs()).max(rhs.abs());
            if v > max_violation {
                max_violation = v;
                witness = vec![theta, t, y1, y2, z1[0], z2[0]];
            }
        }
    }
    Ok(ThetaReport { samples: budget, thetas: thetas.to_vec(), max_violation, witness })
}

/// The transformed generator as a closure, for [`theta_difference_check`].
pub fn transformed_generator(sg: &SpecialGenerator) -> impl Fn(&PointState, f64, &[f64]) -> f64 + '_ {
    move |s, y, z| sg.transformed_floored(s, y, z)
}

/// Kreps-Porteus utility with generator `(rho / beta) (c^rho y^{1-rho} - y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EzParams {
    pub beta: f64,
    pub c: f64,
    pub rho: f64,
}

impl EzParams {
    pub fn validate(&self) -> Result<(), TransformError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(TransformError::InvalidParameter(format!("beta = {} must be positive", self.beta)));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(TransformError::InvalidParameter(format!("c = {} must be nonnegative", self.c)));
        }
        if !(self.rho <= 1.0 && self.rho != 0.0 && self.rho.is_finite()) {
            return Err(TransformError::InvalidParameter(format!("rho = {} must be nonzero and at most 1", self.rho)));
        }
        if self.rho < 0.0 && self.c == 0.0 {
            return Err(TransformError::InvalidParameter("c = 0 with negative rho makes c^rho infinite".into()));
        }
        Ok(())
    }

    /// The Peano regime handled by the change of variables.
    pub fn is_peano(&self) -> bool {
        self.rho > 0.0 && self.rho < 1.0
    }

    pub fn generator_value(&self, y: f64) -> f64 {
        let y = y.max(0.0);
        let r = self.rho;
        if r == 1.0 {
            return (self.c - y) / self.beta;
        }
        r / self.beta * (self.c.powf(r) * y.powf(1.0 - r) - y)
    }
}

/// The EZ generator for any admissible `rho`; for `rho = 1` or `rho < 0` it is
/// monotone in `y` and the plain solver applies.
#[derive(Debug, Clone, Copy)]
pub struct EzGenerator(pub EzParams);

impl Generator for EzGenerator {
    fn eval(&self, _s: &PointState, y: f64, _z: &[f64]) -> f64 {
        let y = if self.0.rho < 0.0 { y.max(TRANSFORM_FLOOR) } else { y };
        self.0.generator_value(y)
    }
}

/// `a = 1 - rho`, `k1 = c (rho / beta)^{1/rho}`, `k2 = -rho / beta`.
pub fn ez_to_special(ez: &EzParams, horizon: f64) -> Result<SpecialGenerator, TransformError> {
    ez.validate()?;
    if !ez.is_peano() {
        return Err(TransformError::InvalidParameter(format!(
            "rho = {} is outside (0, 1); use the EZ generator with the plain solver",
            ez.rho
        )));
    }
    let k1 = ez.c * (ez.rho / ez.beta).powf(1.0 / ez.rho);
    let k2 = -ez.rho / ez.beta;
    let mut sg = SpecialGenerator::with_constants(1.0 - ez.rho, horizon, [k1, k2, 0.0, 0.0]);
    sg.bound = 1f64.max(k2.abs());
    Ok(sg)
}

/// `y(t) = [c^rho + (xi^rho - c^rho) e^{-(rho^2/beta)(T - t)}]^{1/rho}` for a
/// deterministic endowment.
pub fn ez_closed_form(ez: &EzParams, xi: f64, t: f64, horizon: f64) -> Result<f64, TransformError> {
    ez.validate()?;
    if !(xi > 0.0) {
        return Err(TransformError::InvalidParameter(format!("endowment {xi} must be positive")));
    }
    let r = ez.rho;
    if r == 1.0 {
        return Ok(ez.c + (xi - ez.c) * (-(horizon - t) / ez.beta).exp());
    }
    let cr = ez.c.powf(r);
    let u = cr + (xi.powf(r) - cr) * (-(r * r / ez.beta) * (horizon - t)).exp();
    Ok(u.powf(1.0 / r))
}
