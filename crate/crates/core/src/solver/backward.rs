use super::{Generator, GeneratorSpec, PointState, SolutionField, SolverDiagnostics, SolverError, SolverOptions};
use crate::engine::{Field, PathEnsemble, Regressor, TimeGrid};
use crate::exec::{self, Execution};

fn check_terminal(xi: &[f64], ens: &PathEnsemble) -> Result<(), SolverError> {
    if xi.len() != ens.paths() {
        return Err(SolverError::TerminalMismatch { got: xi.len(), paths: ens.paths() });
    }
    if let Some(v) = xi.iter().find(|v| !(**v >= 0.0)) {
        return Err(crate::engine::EngineError::NegativeTerminal(*v).into());
    }
    Ok(())
}

/// Solve `y = ey + dt g(y)` by fixed-point iteration, halving the step
/// whenever the residual stops shrinking.
fn implicit_step<G: Generator + ?Sized>(
    gen: &G,
    s: &PointState,
    ey: f64,
    dt: f64,
    z: &[f64],
    opts: &SolverOptions,
) -> Result<(f64, usize), f64> {
    let mut y = ey;
    let mut omega = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..=opts.fixed_point_iterations {
        let target = ey + dt * gen.eval(s, y, z);
        let residual = target - y;
        if !residual.is_finite() {
            return Err(f64::INFINITY);
        }
        if residual.abs() <= opts.fixed_point_tol * y.abs().max(1.0) {
            return Ok((target, k));
        }
        if residual.abs() > 0.9 * last {
            omega *= 0.5;
        }
        last = residual.abs();
        y += omega * residual;
    }
    let residual = (ey + dt * gen.eval(s, y, z) - y).abs();
    if residual <= opts.fixed_point_tol * y.abs().max(1.0) {
        Ok((y, opts.fixed_point_iterations))
    } else {
        Err(residual)
    }
}

/// Conditional expectation of the next value and the martingale
/// coefficient `Z_i = E[(Y_{i+1} - E[Y_{i+1} | F_i]) dB_i | F_i] / dt`.
///
/// Subtracting the fitted mean is a control variate: it leaves the
/// estimator unchanged in expectation and removes most of its variance.
pub(crate) fn regress_step(
    ens: &PathEnsemble,
    reg: &Regressor,
    i: usize,
    next: &[f64],
) -> Result<(Vec<f64>, Field, f64), SolverError> {
    let m = ens.paths();
    let d = ens.dim();
    let dt = ens.grid().dt();
    let proj = reg.project(next)?;
    let mut z = Field::zeros(1, m, d);
    if !ens.is_deterministic() {
        for k in 0..d {
            let target: Vec<f64> = (0..m).map(|p| (next[p] - proj.values[p]) * ens.increment(i, p)[k]).collect();
            let zk = reg.project(&target)?;
            for p in 0..m {
                z.get_mut(0, p)[k] = zk.values[p] / dt;
            }
        }
    }
    Ok((proj.values, z, proj.standard_error))
}

/// Implicit backward Euler with least-squares conditional expectations.
pub fn solve_backward_euler<G: Generator + ?Sized>(
    gen: &G,
    xi: &[f64],
    ens: &PathEnsemble,
    opts: &SolverOptions,
) -> Result<SolutionField, SolverError> {
    check_terminal(xi, ens)?;
    let grid = *ens.grid();
    let n = grid.steps();
    let m = ens.paths();
    let d = ens.dim();
    let dt = grid.dt();
    let mut y = Field::zeros(n + 1, m, 1);
    y.row_mut(n).copy_from_slice(xi);
    let mut z = Field::zeros(n, m, d);
    let mut y_se = vec![0.0; n + 1];
    let mut diag = SolverDiagnostics::default();
    for i in (0..n).rev() {
        let reg = Regressor::fit(ens, i, &opts.basis, opts.exec)?;
        if reg.is_degraded() {
            diag.degraded_steps.push(i);
        }
        let (ey, zi, se) = regress_step(ens, &reg, i, y.row(i + 1))?;
        y_se[i] = se;
        let t = grid.time(i);
        let solved = exec::map_indices(opts.exec, m, |p| {
            let s = PointState { t, horizon: grid.horizon(), step: i, path: p, b: ens.position(i, p) };
            implicit_step(gen, &s, ey[p], dt, zi.get(0, p), opts).map_err(|r| (p, r))
        });
        let row = y.row_mut(i);
        for (p, res) in solved.into_iter().enumerate() {
            match res {
                Ok((v, k)) => {
                    row[p] = v;
                    diag.max_fixed_point_iterations = diag.max_fixed_point_iterations.max(k);
                }
                Err((path, residual)) => {
                    return Err(SolverError::FixedPointDivergence { step: i, path, residual });
                }
            }
        }
        z.row_mut(i).copy_from_slice(zi.row(0));
    }
    diag.degraded_steps.reverse();
    if ens.is_deterministic() {
        y_se.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(SolutionField { grid, y, z, y_se, diagnostics: diag })
}

/// The generator with its concave part replaced below `level` by the chord
/// through the origin, `f(level) y / level`, which is Lipschitz.
pub struct TruncatedGenerator<'a> {
    pub spec: &'a GeneratorSpec,
    pub level: f64,
}

impl Generator for TruncatedGenerator<'_> {
    fn eval(&self, s: &PointState, y: f64, z: &[f64]) -> f64 {
        let ye = y.max(0.0);
        let concave = if ye >= self.level {
            self.spec.concave_value(s, ye)
        } else {
            self.spec.concave_value(s, self.level) * ye / self.level
        };
        concave + self.spec.monotone.value(s, ye) + self.spec.lipschitz.value(ye, z)
    }
}

/// Picard sweeps `Y^{k+1}_i = E[Y^{k+1}_{i+1} | F_i] + dt g_c(Y^k_i, Z^k_i)`
/// for the truncated generator, until the sup difference between sweeps
/// falls below the tolerance.
pub fn solve_truncated_picard(
    spec: &GeneratorSpec,
    level: f64,
    xi: &[f64],
    ens: &PathEnsemble,
    opts: &SolverOptions,
) -> Result<SolutionField, SolverError> {
    if !(level > 0.0) {
        return Err(SolverError::InvalidParameter(format!("truncation level must be positive, got {level}")));
    }
    check_terminal(xi, ens)?;
    let gen = TruncatedGenerator { spec, level };
    let grid = *ens.grid();
    let n = grid.steps();
    let m = ens.paths();
    let d = ens.dim();
    let dt = grid.dt();
    let regs: Vec<Regressor> =
        exec::try_map_indices(Execution::Sequential, n, |i| Regressor::fit(ens, i, &opts.basis, opts.exec))?;
    let mut diag = SolverDiagnostics {
        degraded_steps: (0..n).filter(|&i| regs[i].is_degraded()).collect(),
        ..Default::default()
    };
    let mut y = Field::zeros(n + 1, m, 1);
    for i in 0..=n {
        y.row_mut(i).copy_from_slice(xi);
    }
    let mut z = Field::zeros(n, m, d);
    let mut y_se = vec![0.0; n + 1];
    let mut difference = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < opts.picard_max_sweeps {
        sweeps += 1;
        let mut next_y = Field::zeros(n + 1, m, 1);
        next_y.row_mut(n).copy_from_slice(xi);
        let mut next_z = Field::zeros(n, m, d);
        for i in (0..n).rev() {
            let (ey, zi, se) = regress_step(ens, &regs[i], i, next_y.row(i + 1))?;
            y_se[i] = if ens.is_deterministic() { 0.0 } else { se };
            let t = grid.time(i);
            let row = exec::map_indices(opts.exec, m, |p| {
                let s = PointState { t, horizon: grid.horizon(), step: i, path: p, b: ens.position(i, p) };
                ey[p] + dt * gen.eval(&s, y.scalar(i, p), z.get(i, p))
            });
            next_y.row_mut(i).copy_from_slice(&row);
            next_z.row_mut(i).copy_from_slice(zi.row(0));
        }
        difference = next_y.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        y = next_y;
        z = next_z;
        if !difference.is_finite() {
            break;
        }
        if difference < opts.picard_tol {
            let below = y.data().iter().filter(|v| **v < level).count();
            diag.sweeps = Some(sweeps);
            diag.final_difference = Some(difference);
            diag.below_truncation = Some(below as f64 / y.data().len() as f64);
            return Ok(SolutionField { grid, y, z, y_se, diagnostics: diag });
        }
    }
    Err(SolverError::PicardNotConverged { sweeps, difference })
}

/// `(step, t, y) -> g(t, y, 0)` with `B = 0`, for deterministic problems.
pub fn deterministic_restriction<G: Generator + ?Sized>(gen: &G, grid: TimeGrid) -> impl Fn(usize, f64, f64) -> f64 + '_ {
    const ZERO: [f64; 1] = [0.0];
    move |i, t, y| {
        let s = PointState { t, horizon: grid.horizon(), step: i, path: 0, b: &ZERO };
        gen.eval(&s, y, &ZERO)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    /// `y(t_i)` for `i = 0..=N`.
    pub values: Vec<f64>,
    /// RK4 substeps per grid interval at acceptance.
    pub substeps: usize,
}

const ODE_TOL: f64 = 1e-10;
const ODE_MAX_SUBSTEPS: usize = 1 << 16;

fn rk4_path<F: Fn(usize, f64, f64) -> f64>(g: &F, xi: f64, grid: &TimeGrid, substeps: usize) -> Vec<f64> {
    let n = grid.steps();
    let h = grid.dt() / substeps as f64;
    let mut out = vec![0.0; n + 1];
    out[n] = xi;
    let mut y = xi;
    let f = |i: usize, t: f64, y: f64| g(i, t, y.max(0.0));
    for i in (0..n).rev() {
        let top = grid.time(i + 1);
        for k in 0..substeps {
            let t = top - k as f64 * h;
            let k1 = f(i, t, y);
            let k2 = f(i, t - h / 2.0, y + h * k1 / 2.0);
            let k3 = f(i, t - h / 2.0, y + h * k2 / 2.0);
            let k4 = f(i, t - h, y + h * k3);
            y = (y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0).max(0.0);
        }
        out[i] = y;
    }
    out
}

/// Integrate `y' = -g(t, y)`, `y(T) = xi` backwards with RK4, doubling the
/// substeps until two refinements agree to 1e-10. Negative values are
/// clipped at zero.
pub fn solve_deterministic_ode<F: Fn(usize, f64, f64) -> f64>(
    g: F,
    xi: f64,
    grid: &TimeGrid,
) -> Result<OdeSolution, SolverError> {
    if !(xi >= 0.0) {
        return Err(crate::engine::EngineError::NegativeTerminal(xi).into());
    }
    let mut substeps = 1;
    let mut prev = rk4_path(&g, xi, grid, substeps);
    while substeps < ODE_MAX_SUBSTEPS {
        substeps *= 2;
        let cur = rk4_path(&g, xi, grid, substeps);
        let diff = cur.iter().zip(&prev).map(|(a, b)| (a - b).abs() / a.abs().max(1.0)).fold(0.0, f64::max);
        if !diff.is_finite() {
            return Err(SolverError::OdeNotConverged("non-finite value".into()));
        }
        if diff < ODE_TOL {
            return Ok(OdeSolution { values: cur, substeps });
        }
        prev = cur;
    }
    Err(SolverError::OdeNotConverged(format!("{substeps} substeps per interval")))
}
