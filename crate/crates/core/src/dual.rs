//! Dual representation of the solution as an infimum over controls of
//! linear BSDEs, the feedback control attaining it, and the lower bound
//! obtained by integrating the reference function.

use crate::engine::{girsanov_weights, EngineError, Field, PathEnsemble, Regressor};
use crate::exec::{self, Execution};
use crate::peano::{FunctionClass, HTransform, PeanoError};
use crate::quad;
use crate::solver::{
    deterministic_restriction, regress_step, solve_backward_euler, solve_deterministic_ode, Generator, GeneratorSpec,
    PointState, SolutionField, SolverDiagnostics, SolverError, SolverOptions,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DualError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Peano(#[from] PeanoError),
    #[error("control '{0}' is not admissible: the conjugate is infinite along it")]
    Inadmissible(String),
    #[error("solution is not positive at step {step}, path {path}: {value}")]
    NonpositiveY { step: usize, path: usize, value: f64 },
    #[error("control family is empty")]
    EmptyFamily,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// `f*(t, q) = sup_{y >= 0} (f(t, y) - q y)`, `+inf` when unbounded.
pub fn f_star(spec: &GeneratorSpec, s: &PointState, q: f64) -> f64 {
    spec.concave_conjugate(s, q)
}

/// One member of a control family as declared in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSpec {
    Constant(f64),
    /// `values[k]` applies from `breakpoints[k - 1]` (or 0) up to `breakpoints[k]`.
    Piecewise { breakpoints: Vec<f64>, values: Vec<f64> },
    Feedback,
}

impl ControlSpec {
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ControlSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlSpec::Constant(q) => write!(f, "constant({q})"),
            ControlSpec::Piecewise { breakpoints, values } => {
                let b: Vec<String> = breakpoints.iter().map(|v| v.to_string()).collect();
                let v: Vec<String> = values.iter().map(|v| v.to_string()).collect();
                write!(f, "piecewise({}|{})", b.join(","), v.join(","))
            }
            ControlSpec::Feedback => write!(f, "feedback"),
        }
    }
}

impl FromStr for ControlSpec {
    type Err = DualError;

    /// `0.5`, `constant(0.5)`, `piecewise(0.5|0.6,0.4)` or `feedback`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || DualError::InvalidParameter(format!("cannot parse control '{s}'"));
        if s == "feedback" {
            return Ok(ControlSpec::Feedback);
        }
        if let Ok(q) = s.parse::<f64>() {
            return Ok(ControlSpec::Constant(q));
        }
        let parse_list = |t: &str| -> Result<Vec<f64>, DualError> {
            t.split(',').filter(|x| !x.trim().is_empty()).map(|x| x.trim().parse::<f64>().map_err(|_| bad())).collect()
        };
        if let Some(inner) = s.strip_prefix("constant(").and_then(|r| r.strip_suffix(')')) {
            return inner.trim().parse().map(ControlSpec::Constant).map_err(|_| bad());
        }
        if let Some(inner) = s.strip_prefix("piecewise(").and_then(|r| r.strip_suffix(')')) {
            let (b, v) = inner.split_once('|').ok_or_else(bad)?;
            let spec = ControlSpec::Piecewise { breakpoints: parse_list(b)?, values: parse_list(v)? };
            return Ok(spec);
        }
        Err(bad())
    }
}

/// A nonnegative control on the grid, constant over each step
/// (`times = N`, one value per path).
#[derive(Debug, Clone)]
pub struct ControlProcess {
    pub label: String,
    pub values: Field,
    /// The same value on every path.
    pub deterministic: bool,
}

impl ControlProcess {
    pub fn constant(ens: &PathEnsemble, q: f64) -> Result<Self, DualError> {
        Self::piecewise(ens, &[], &[q]).map(|mut c| {
            c.label = ControlSpec::Constant(q).label();
            c
        })
    }

    pub fn piecewise(ens: &PathEnsemble, breakpoints: &[f64], values: &[f64]) -> Result<Self, DualError> {
        if values.len() != breakpoints.len() + 1 {
            return Err(DualError::InvalidParameter("piecewise control needs one more value than breakpoints".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DualError::InvalidParameter("breakpoints must increase".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(DualError::InvalidParameter(format!("control value {v} must be nonnegative")));
        }
        let grid = ens.grid();
        let n = grid.steps();
        let m = ens.paths();
        let mut field = Field::zeros(n, m, 1);
        for i in 0..n {
            let t = grid.time(i);
            let k = breakpoints.partition_point(|&b| b <= t + 1e-12);
            field.row_mut(i).iter_mut().for_each(|v| *v = values[k]);
        }
        let label = ControlSpec::Piecewise { breakpoints: breakpoints.to_vec(), values: values.to_vec() }.label();
        Ok(ControlProcess { label, values: field, deterministic: true })
    }

    pub fn from_spec(
        spec: &ControlSpec,
        gen: &GeneratorSpec,
        primal: &SolutionField,
        ens: &PathEnsemble,
    ) -> Result<Self, DualError> {
        match spec {
            ControlSpec::Constant(q) => Self::constant(ens, *q),
            ControlSpec::Piecewise { breakpoints, values } => Self::piecewise(ens, breakpoints, values),
            ControlSpec::Feedback => feedback_control(gen, primal, ens),
        }
    }

    pub fn at(&self, i: usize, m: usize) -> f64 {
        self.values.scalar(i, m)
    }
}

/// `q*_t = f'(t, Y_t)` at the left end of each step.
pub fn feedback_control(spec: &GeneratorSpec, sol: &SolutionField, ens: &PathEnsemble) -> Result<ControlProcess, DualError> {
    let grid = sol.grid;
    let n = grid.steps();
    let m = sol.y.paths();
    if m != ens.paths() {
        return Err(DualError::InvalidParameter("solution and ensemble disagree on path count".into()));
    }
    let mut field = Field::zeros(n, m, 1);
    for i in 0..n {
        for p in 0..m {
            let y = sol.y.scalar(i, p);
            if !(y > 0.0) {
                return Err(DualError::NonpositiveY { step: i, path: p, value: y });
            }
            let s = PointState { t: grid.time(i), horizon: grid.horizon(), step: i, path: p, b: ens.position(i, p) };
            field.get_mut(i, p)[0] = spec.concave_slope(&s, y);
        }
    }
    let deterministic = ens.is_deterministic() || m == 1;
    Ok(ControlProcess { label: ControlSpec::Feedback.label(), values: field, deterministic })
}

/// `max |f(t, Y) - f*(t, q) - q Y|` over the grid, for `q = f'(t, Y)`.
pub fn tangency_residual(spec: &GeneratorSpec, sol: &SolutionField, q: &ControlProcess, ens: &PathEnsemble) -> f64 {
    let grid = sol.grid;
    let mut worst = 0.0f64;
    for i in 0..grid.steps() {
        for p in 0..sol.y.paths() {
            let s = PointState { t: grid.time(i), horizon: grid.horizon(), step: i, path: p, b: ens.position(i, p) };
            let y = sol.y.scalar(i, p);
            let qv = q.at(i, p);
            let r = spec.concave_value(&s, y) - f_star(spec, &s, qv) - qv * y;
            worst = worst.max(r.abs() / spec.concave_value(&s, y).abs().max(1.0));
        }
    }
    worst
}

/// The controlled generator in discounted form,
/// `q y + f*(t, q) + f_bar(t, y) + f_tilde(t, y, z)`.
///
/// Its solution is `e^{-∫_0^t q} Y^q_t`, which has the same value at time
/// zero as the controlled BSDE and avoids the exponential weights.
struct ControlledGenerator<'a> {
    spec: &'a GeneratorSpec,
    q: &'a ControlProcess,
    conj: Field,
}

impl Generator for ControlledGenerator<'_> {
    fn eval(&self, s: &PointState, y: f64, z: &[f64]) -> f64 {
        let q = self.q.at(s.step, s.path);
        let ye = y.max(0.0);
        q * y + self.conj.scalar(s.step, s.path) + self.spec.monotone.value(s, ye) + self.spec.lipschitz.value(ye, z)
    }
}

fn conjugate_field(spec: &GeneratorSpec, q: &ControlProcess, ens: &PathEnsemble) -> Result<Field, DualError> {
    let grid = ens.grid();
    let n = grid.steps();
    let m = ens.paths();
    let mut out = Field::zeros(n, m, 1);
    for i in 0..n {
        for p in 0..m {
            let s = PointState { t: grid.time(i), horizon: grid.horizon(), step: i, path: p, b: ens.position(i, p) };
            let v = f_star(spec, &s, q.at(i, p));
            if !v.is_finite() {
                return Err(DualError::Inadmissible(q.label.clone()));
            }
            out.get_mut(i, p)[0] = v;
        }
    }
    Ok(out)
}

/// The generator ignores `B_t`, so its restriction to the frozen path is
/// an ODE.
pub fn is_path_free(spec: &GeneratorSpec) -> bool {
    spec.concave.as_ref().is_none_or(|c| !c.additive.depends_on_path() && !c.shift.depends_on_path())
        && matches!(spec.monotone, crate::solver::MonotonePart::Zero | crate::solver::MonotonePart::RootDeficit)
}

/// Solve the controlled linear BSDE. With only a concave part and a
/// deterministic control this is the explicit recursion
/// `Y_i = e^{q_i dt} E[Y_{i+1} | F_i] + ∫_{t_i}^{t_{i+1}} e^{q_i (s - t_i)} f*(s, q_i) ds`;
/// otherwise the backward Euler engine is used.
pub fn solve_controlled(
    spec: &GeneratorSpec,
    q: &ControlProcess,
    xi: &[f64],
    ens: &PathEnsemble,
    opts: &SolverOptions,
) -> Result<SolutionField, DualError> {
    let conj = conjugate_field(spec, q, ens)?;
    if !(spec.only_concave() && q.deterministic && is_path_free(spec)) {
        let gen = ControlledGenerator { spec, q, conj };
        return Ok(solve_backward_euler(&gen, xi, ens, opts)?);
    }
    if xi.len() != ens.paths() {
        return Err(SolverError::TerminalMismatch { got: xi.len(), paths: ens.paths() }.into());
    }
    let grid = *ens.grid();
    let n = grid.steps();
    let m = ens.paths();
    let dt = grid.dt();
    let mut y = Field::zeros(n + 1, m, 1);
    y.row_mut(n).copy_from_slice(xi);
    let mut z = Field::zeros(n, m, ens.dim());
    let mut y_se = vec![0.0; n + 1];
    let mut diag = SolverDiagnostics::default();
    let time_free = spec.concave.as_ref().is_none_or(|c| c.additive.is_constant() && c.shift.is_constant());
    for i in (0..n).rev() {
        let reg = Regressor::fit(ens, i, &opts.basis, opts.exec)?;
        if reg.is_degraded() {
            diag.degraded_steps.push(i);
        }
        let (ey, zi, se) = regress_step(ens, &reg, i, y.row(i + 1))?;
        y_se[i] = if ens.is_deterministic() { 0.0 } else { se };
        let qi = q.at(i, 0);
        let ti = grid.time(i);
        let growth = (qi * dt).exp();
        let running = if time_free {
            let fs = conj.scalar(i, 0);
            if qi == 0.0 {
                fs * dt
            } else {
                fs * (qi * dt).exp_m1() / qi
            }
        } else {
            let f = |s: f64| {
                let st = PointState { t: s, horizon: grid.horizon(), step: i, path: 0, b: &[] };
                (qi * (s - ti)).exp() * f_star(spec, &st, qi)
            };
            quad::panel(ti, ti + dt, &f)
        };
        for (p, v) in y.row_mut(i).iter_mut().enumerate() {
            *v = growth * ey[p] + running;
        }
        z.row_mut(i).copy_from_slice(zi.row(0));
    }
    diag.degraded_steps.reverse();
    Ok(SolutionField { grid, y, z, y_se, diagnostics: diag })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub label: String,
    pub p: f64,
    pub p_bar: f64,
    /// Path average of `exp(p_bar ∫_0^T q)`.
    pub exponential_moment: f64,
    /// Path average of `(∫_0^T f*(t, q_t) dt)^p`.
    pub conjugate_moment: f64,
    pub finite: bool,
    /// The top 1% of paths carry more than half of either average.
    pub heavy_tail: bool,
}

fn top_share(values: &[f64]) -> f64 {
    let total = exec::ordered_sum(values);
    if !(total > 0.0) || !total.is_finite() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = values.len().div_ceil(100);
    exec::ordered_sum(&sorted[..k]) / total
}

/// Path estimates of the two integrability conditions on a control.
pub fn admissibility_check(
    spec: &GeneratorSpec,
    q: &ControlProcess,
    ens: &PathEnsemble,
    p: f64,
    p_bar: f64,
) -> Result<MomentReport, DualError> {
    if !(p > 1.0) {
        return Err(DualError::InvalidParameter(format!("p = {p} must exceed 1")));
    }
    if !(p_bar > p / (p - 1.0)) {
        return Err(DualError::InvalidParameter(format!("p_bar = {p_bar} must exceed the conjugate exponent of p = {p}")));
    }
    let grid = ens.grid();
    let n = grid.steps();
    let dt = grid.dt();
    let per_path: Vec<(f64, f64)> = exec::map_indices(Execution::Sequential, ens.paths(), |m| {
        let mut qint = 0.0;
        let mut fint = 0.0;
        for i in 0..n {
            let s = PointState { t: grid.time(i), horizon: grid.horizon(), step: i, path: m, b: ens.position(i, m) };
            qint += q.at(i, m) * dt;
            fint += f_star(spec, &s, q.at(i, m)) * dt;
        }
        ((p_bar * qint).exp(), fint.powf(p))
    });
    let e: Vec<f64> = per_path.iter().map(|v| v.0).collect();
    let f: Vec<f64> = per_path.iter().map(|v| v.1).collect();
    let exponential_moment = exec::mean(&e);
    let conjugate_moment = exec::mean(&f);
    let heavy_tail = ens.paths() >= 100 && (top_share(&e) > 0.5 || top_share(&f) > 0.5);
    Ok(MomentReport {
        label: q.label.clone(),
        p,
        p_bar,
        exponential_moment,
        conjugate_moment,
        finite: exponential_moment.is_finite() && conjugate_moment.is_finite(),
        heavy_tail,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualityReport {
    pub y0_primal: f64,
    pub y0_per_control: BTreeMap<String, f64>,
    /// `min_q (Y^q_0 - Y_0)` over the admissible members.
    pub gap_min: f64,
    /// `|Y^{q*}_0 - Y_0|` when the feedback control is in the family.
    pub feedback_match_error: Option<f64>,
    pub tangency_residual: Option<f64>,
    pub inadmissible: Vec<String>,
    pub moments: Vec<MomentReport>,
    /// Three combined standard errors, plus 1e-9.
    pub tolerance: f64,
    pub weak_duality_holds: bool,
}

/// The primal solution; exact ODE integration when every input is
/// deterministic, backward Euler otherwise.
pub fn primal_solution(
    spec: &GeneratorSpec,
    xi: &[f64],
    ens: &PathEnsemble,
    opts: &SolverOptions,
) -> Result<SolutionField, DualError> {
    if ens.is_deterministic() && is_path_free(spec) && matches!(spec.monotone, crate::solver::MonotonePart::Zero | crate::solver::MonotonePart::RootDeficit) {
        let grid = *ens.grid();
        let ode = solve_deterministic_ode(deterministic_restriction(spec, grid), xi[0], &grid)?;
        let n = grid.steps();
        let y = Field::from_rows(n + 1, 1, 1, ode.values)?;
        let z = Field::zeros(n, 1, ens.dim());
        return Ok(SolutionField { grid, y, z, y_se: vec![0.0; n + 1], diagnostics: SolverDiagnostics::default() });
    }
    Ok(solve_backward_euler(spec, xi, ens, opts)?)
}

/// Compare the primal value with the controlled values over a family.
pub fn duality_gap(
    spec: &GeneratorSpec,
    xi: &[f64],
    ens: &PathEnsemble,
    family: &[ControlSpec],
    opts: &SolverOptions,
) -> Result<DualityReport, DualError> {
    if family.is_empty() {
        return Err(DualError::EmptyFamily);
    }
    let primal = primal_solution(spec, xi, ens, opts)?;
    let y0 = primal.y0();
    let results: Vec<Result<(ControlProcess, Option<SolutionField>), DualError>> =
        exec::map_indices(opts.exec, family.len(), |k| {
            let q = ControlProcess::from_spec(&family[k], spec, &primal, ens)?;
            match solve_controlled(spec, &q, xi, ens, opts) {
                Ok(sol) => Ok((q, Some(sol))),
                Err(DualError::Inadmissible(_)) => Ok((q, None)),
                Err(e) => Err(e),
            }
        });
    let mut report = DualityReport {
        y0_primal: y0,
        y0_per_control: BTreeMap::new(),
        gap_min: f64::INFINITY,
        feedback_match_error: None,
        tangency_residual: None,
        inadmissible: Vec::new(),
        moments: Vec::new(),
        tolerance: 0.0,
        weak_duality_holds: true,
    };
    let mut tol = 0.0f64;
    for (k, res) in results.into_iter().enumerate() {
        let (q, sol) = res?;
        let Some(sol) = sol else {
            report.inadmissible.push(q.label.clone());
            continue;
        };
        let yq = sol.y0();
        let t = 3.0 * (primal.y0_se() + sol.y0_se()) + 1e-9;
        tol = tol.max(t);
        report.gap_min = report.gap_min.min(yq - y0);
        if yq - y0 < -t {
            report.weak_duality_holds = false;
        }
        if family[k] == ControlSpec::Feedback {
            report.feedback_match_error = Some((yq - y0).abs());
            report.tangency_residual = Some(tangency_residual(spec, &primal, &q, ens));
        }
        if let Ok(m) = admissibility_check(spec, &q, ens, 2.0, 4.0) {
            report.moments.push(m);
        }
        report.y0_per_control.insert(q.label.clone(), yq);
    }
    report.tolerance = tol;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct LowerBoundCertificate {
    /// `e^{-A_t} Phi^{-1}(E_Qbar[Phi(xi_bar) | F_t] + T - t)` per node.
    pub bound: Field,
    /// Standard error of the bound at each step, largest over paths.
    pub bound_se: Vec<f64>,
    pub bound_t0: f64,
    /// `min_t E_Qbar[Phi(xi_bar) | F_t]` over nodes.
    pub eta: f64,
    pub violations: usize,
    /// `min (Y - bound + tolerance)` over nodes.
    pub worst_margin: f64,
    pub clamped_drifts: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub bound_t0: f64,
    pub y0: f64,
    pub eta: f64,
    pub violations: usize,
    pub worst_margin: f64,
    pub pass: bool,
}

impl LowerBoundCertificate {
    pub fn summary(&self, sol: &SolutionField) -> CertificateSummary {
        CertificateSummary {
            bound_t0: self.bound_t0,
            y0: sol.y0(),
            eta: self.eta,
            violations: self.violations,
            worst_margin: self.worst_margin,
            pass: self.pass,
        }
    }
}

/// Check `Y_t >= e^{-A_t} Phi^{-1}(E_Qbar[Phi(xi_bar) | F_t] + T - t)` at
/// every node, with `Phi(u) = ∫_0^u dy / (c_bar + phi_bar(y))`,
/// `phi_bar = e^{-beta_tilde T} phi` and `c_bar = e^{-beta_tilde T} c`.
///
/// The Lipschitz part is split as `a_t Y + Z b_t`; `a` is integrated into
/// `A_t` by left Riemann sums and `b` is the Girsanov drift of `Qbar`.
/// Tolerance per node is three standard errors of the bound plus three of
/// the solution fit.
pub fn lower_bound_certificate(
    spec: &GeneratorSpec,
    xi: &[f64],
    ens: &PathEnsemble,
    sol: &SolutionField,
    opts: &SolverOptions,
) -> Result<LowerBoundCertificate, DualError> {
    let phi = spec
        .phi()?
        .ok_or_else(|| DualError::InvalidParameter("the lower bound needs a concave part".into()))?;
    let c = spec.c_constant();
    if c == 0.0 && phi.classify()? != FunctionClass::Peano {
        return Err(PeanoError::DivergentIntegral.into());
    }
    let grid = sol.grid;
    let n = grid.steps();
    let m = ens.paths();
    let d = ens.dim();
    let dt = grid.dt();
    let horizon = grid.horizon();
    let bt = spec.beta_tilde();
    let scale = (bt * horizon).exp();
    let h = HTransform::new(&phi, c)?;
    let zero = vec![0.0; d];
    let mut drift = Field::zeros(n, m, d);
    let mut a_cum = Field::zeros(n + 1, m, 1);
    for p in 0..m {
        let mut acc = 0.0;
        for i in 0..n {
            let y = sol.y.scalar(i, p);
            let zv = sol.z.get(i, p);
            let lip = &spec.lipschitz;
            let a = if y > 0.0 { (lip.value(y, zv) - lip.value(0.0, zv)) / y } else { 0.0 };
            let zn2: f64 = zv.iter().map(|v| v * v).sum();
            if zn2 > 0.0 {
                let k = (lip.value(0.0, zv) - lip.value(0.0, &zero)) / zn2;
                for (dst, zk) in drift.get_mut(i, p).iter_mut().zip(zv) {
                    *dst = k * zk;
                }
            }
            acc += a * dt;
            a_cum.get_mut(i + 1, p)[0] = acc;
        }
    }
    let weights = girsanov_weights(ens, &drift, spec.gamma(), opts.exec)?;
    let phi_xi: Vec<f64> = (0..m).map(|p| scale * h.eval((a_cum.scalar(n, p)).exp() * xi[p])).collect();
    let mut bound = Field::zeros(n + 1, m, 1);
    let mut bound_se = vec![0.0; n + 1];
    let mut eta = f64::INFINITY;
    let mut violations = 0;
    let mut worst_margin = f64::INFINITY;
    let inverse = |v: f64| h.inverse(v.max(0.0) / scale);
    for i in 0..=n {
        let target: Vec<f64> = (0..m).map(|p| weights.from_step(i, p) * phi_xi[p]).collect();
        let reg = if i == n { None } else { Some(Regressor::fit(ens, i, &opts.basis, opts.exec)?) };
        let (values, se) = match &reg {
            None => (target, 0.0),
            Some(r) => {
                let proj = r.project(&target)?;
                (proj.values, if ens.is_deterministic() { 0.0 } else { proj.standard_error })
            }
        };
        let t = grid.time(i);
        let y_se = sol.y_se.get(i).copied().unwrap_or(0.0);
        let mut se_i = 0.0f64;
        for p in 0..m {
            eta = eta.min(values[p]);
            let u = inverse(values[p] + horizon - t);
            let disc = (-a_cum.scalar(i, p)).exp();
            let b = disc * u;
            bound.get_mut(i, p)[0] = b;
            // d Phi^{-1}/dv = c_bar + phi_bar(u), applied to the pointwise error of the fit
            let (bse, yse) = match &reg {
                Some(r) => (r.pointwise_se(p, se), r.pointwise_se(p, y_se)),
                None => (0.0, y_se),
            };
            let bse = disc * (c + phi.eval(u)) / scale * bse;
            se_i = se_i.max(bse);
            let margin = sol.y.scalar(i, p) - b + 3.0 * (bse + yse) + 1e-9 * b.abs().max(1.0);
            worst_margin = worst_margin.min(margin);
            if margin < 0.0 {
                violations += 1;
            }
        }
        bound_se[i] = se_i;
    }
    let bound_t0 = exec::mean(bound.row(0));
    Ok(LowerBoundCertificate {
        bound,
        bound_se,
        bound_t0,
        eta,
        violations,
        worst_margin,
        clamped_drifts: weights.clamped,
        pass: violations == 0,
    })
}
