//! The explicit family of solutions from zero terminal value, Lipschitz
//! sup-convolution envelopes and the maximal solution they approximate.

use super::{solve_backward_euler, Generator, GeneratorSpec, PointState, SolutionField, SolverError, SolverOptions};
use crate::engine::{PathEnsemble, TimeGrid};
use crate::exec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiplicityPath {
    pub c: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `|y_i - y_{i+1} - ∫ sqrt(y)|` per interval, integral by Simpson's rule.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

/// `y_t = ((c - t)^+)^2 / 4`, a solution of `y' = -sqrt(y)`, `y(T) = 0` for
/// every `c` in `[0, T]`.
pub fn multiplicity_family(c: f64, grid: &TimeGrid) -> Result<MultiplicityPath, SolverError> {
    let horizon = grid.horizon();
    if !(0.0..=horizon).contains(&c) {
        return Err(SolverError::OutOfRange(format!("family parameter {c} outside [0, {horizon}]")));
    }
    let y = |t: f64| 0.25 * (c - t).max(0.0).powi(2);
    let n = grid.steps();
    let times: Vec<f64> = (0..=n).map(|i| grid.time(i)).collect();
    let values: Vec<f64> = times.iter().map(|&t| y(t)).collect();
    let residuals: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (times[i], times[i + 1]);
            let integral = (b - a) / 6.0 * (y(a).sqrt() + 4.0 * y(0.5 * (a + b)).sqrt() + y(b).sqrt());
            (values[i] - values[i + 1] - integral).abs()
        })
        .collect();
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    Ok(MultiplicityPath { c, times, values, residuals, max_residual })
}

/// `sup_{u >= 0} (g(u) - n |x - u|)` by a grid scan over `[0, x + radius]`
/// refined with golden-section search. Works for any continuous `g`.
pub fn sup_convolution<F: Fn(f64) -> f64>(g: F, n: f64, x: f64, radius: f64) -> f64 {
    let obj = |u: f64| g(u) - n * (x - u).abs();
    let hi = (x + radius).max(radius);
    let cells = 4000;
    let h = hi / cells as f64;
    let mut best: usize = 0;
    let mut best_v = obj(0.0);
    for k in 1..=cells {
        let v = obj(k as f64 * h);
        if v > best_v {
            best_v = v;
            best = k;
        }
    }
    let (mut a, mut b) = ((best.saturating_sub(1)) as f64 * h, ((best + 1).min(cells)) as f64 * h);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if obj(c) >= obj(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best_v.max(obj(0.5 * (a + b))).max(obj(x.max(0.0)))
}

/// `g_n(t, y) = sup_{u >= 0} (g(t, u) - n |y - u|)` for a generator made of
/// its concave part only.
///
/// Concavity and monotonicity put the maximiser at `max(y, y_n)`, where
/// `y_n` is the point at which the slope of `g` drops to `n`. That point is
/// found once in the variable of the underlying Peano function.
#[derive(Debug, Clone)]
pub struct LipschitzEnvelope<'a> {
    spec: &'a GeneratorSpec,
    n: f64,
    knot: f64,
}

impl<'a> LipschitzEnvelope<'a> {
    pub fn new(spec: &'a GeneratorSpec, n: f64) -> Result<Self, SolverError> {
        if !spec.only_concave() {
            return Err(SolverError::Unsupported("envelope needs a generator without monotone or Lipschitz parts".into()));
        }
        if !(n > 0.0) {
            return Err(SolverError::InvalidParameter(format!("envelope slope must be positive, got {n}")));
        }
        let knot = match &spec.concave {
            None => 0.0,
            Some(part) if part.multiplier == 0.0 => 0.0,
            Some(part) => {
                let q = n / (part.multiplier * part.scale);
                part.rho.argmax(q).ok_or_else(|| {
                    SolverError::DivergentSup(format!("slope {n} is below the asymptotic slope of the generator"))
                })?
            }
        };
        Ok(LipschitzEnvelope { spec, n, knot })
    }

    pub fn slope(&self) -> f64 {
        self.n
    }

    fn kink(&self, s: &PointState) -> f64 {
        match &self.spec.concave {
            Some(part) if part.multiplier != 0.0 => ((self.knot - part.shift.eval(s)) / part.scale).max(0.0),
            _ => 0.0,
        }
    }

    pub fn value(&self, s: &PointState, y: f64) -> f64 {
        let k = self.kink(s);
        if y < k {
            self.spec.concave_value(s, k) - self.n * (k - y)
        } else {
            self.spec.concave_value(s, y)
        }
    }
}

impl Generator for LipschitzEnvelope<'_> {
    fn eval(&self, s: &PointState, y: f64, _z: &[f64]) -> f64 {
        self.value(s, y)
    }
}

#[derive(Debug, Clone)]
pub struct MaximalSolution {
    /// Solution for the last slope solved.
    pub field: SolutionField,
    /// `(n, Y_0, standard error)` for each slope solved.
    pub estimates: Vec<(f64, f64, f64)>,
    /// First-order extrapolation of `Y_0` in `1 / n` from the last two slopes.
    pub extrapolated_y0: f64,
    /// Successive estimates differed by less than 1e-4 before the schedule ended.
    pub settled: bool,
}

pub const DEFAULT_SCHEDULE: [f64; 5] = [2.0, 4.0, 8.0, 16.0, 32.0];
const SETTLE_TOL: f64 = 1e-4;

/// Solve with the envelopes `g_n` along an increasing schedule. The
/// solutions decrease in `n`; an increase beyond three combined standard
/// errors is reported as an error.
pub fn maximal_solution(
    spec: &GeneratorSpec,
    xi: &[f64],
    ens: &PathEnsemble,
    schedule: &[f64],
    opts: &SolverOptions,
) -> Result<MaximalSolution, SolverError> {
    if !spec.only_concave() {
        return Err(SolverError::Unsupported("maximal solution needs a generator without monotone or Lipschitz parts".into()));
    }
    if schedule.is_empty() || schedule.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SolverError::InvalidParameter("slope schedule must be nonempty and increasing".into()));
    }
    let mut estimates: Vec<(f64, f64, f64)> = Vec::new();
    let mut field = None;
    let mut settled = false;
    for &n in schedule {
        let env = LipschitzEnvelope::new(spec, n)?;
        let sol = solve_backward_euler(&env, xi, ens, opts)?;
        let (y0, se) = (sol.y0(), sol.y0_se());
        if let Some(&(_, prev, prev_se)) = estimates.last() {
            if y0 > prev + 3.0 * (se + prev_se) + 1e-10 {
                return Err(SolverError::NonMonotone { n, previous: prev, current: y0 });
            }
        }
        let done = estimates.last().is_some_and(|&(_, prev, _)| (prev - y0).abs() < SETTLE_TOL);
        estimates.push((n, y0, se));
        field = Some(sol);
        if done {
            settled = true;
            break;
        }
    }
    let extrapolated_y0 = match estimates.as_slice() {
        [.., (n1, y1, _), (n2, y2, _)] => {
            let r = n2 / n1;
            (r * y2 - y1) / (r - 1.0)
        }
        [(_, y, _)] => *y,
        [] => unreachable!(),
    };
    Ok(MaximalSolution { field: field.expect("schedule is nonempty"), estimates, extrapolated_y0, settled })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AprioriReport {
    pub p: f64,
    pub a: f64,
    /// Path average of `sup e^{apt}|Y|^p + (∫ e^{2as}|Z|^2 ds)^{p/2}`.
    pub numerator: f64,
    /// Path average of `e^{apT}|xi|^p + (∫ e^{as} f_s ds)^p`.
    pub denominator: f64,
    pub ratio: f64,
}

/// Finite-sample version of the a-priori `L^p` estimate at time zero.
/// `f_process` is the size of the generator at `y = 0, z = 0` along paths.
pub fn apriori_diagnostic<F>(
    sol: &SolutionField,
    ens: &PathEnsemble,
    p: f64,
    a: f64,
    growth: (f64, f64),
    f_process: F,
) -> Result<AprioriReport, SolverError>
where
    F: Fn(&PointState) -> f64 + Sync,
{
    let (mu, lambda) = growth;
    if !(p > 1.0) {
        return Err(SolverError::InvalidParameter(format!("p must exceed 1, got {p}")));
    }
    let need = mu + lambda * lambda / (p - 1.0).min(1.0);
    if !(a >= need) {
        return Err(SolverError::InvalidParameter(format!("a = {a} is below mu + lambda^2 / (1 ^ (p - 1)) = {need}")));
    }
    let grid = sol.grid;
    let n = grid.steps();
    let dt = grid.dt();
    let m = sol.y.paths();
    let per_path: Vec<(f64, f64)> = exec::map_indices(exec::Execution::Sequential, m, |path| {
        let mut sup = 0.0f64;
        for i in 0..=n {
            sup = sup.max((a * p * grid.time(i)).exp() * sol.y.scalar(i, path).abs().powf(p));
        }
        let mut zint = 0.0;
        let mut fint = 0.0;
        for i in 0..n {
            let t = grid.time(i);
            zint += (2.0 * a * t).exp() * sol.z.norm(i, path).powi(2) * dt;
            let s = PointState { t, horizon: grid.horizon(), step: i, path, b: ens.position(i, path) };
            fint += (a * t).exp() * f_process(&s).abs() * dt;
        }
        let xi = sol.y.scalar(n, path).abs();
        (sup + zint.powf(p / 2.0), (a * p * grid.horizon()).exp() * xi.powf(p) + fint.powf(p))
    });
    let numerator = exec::ordered_sum(&per_path.iter().map(|v| v.0).collect::<Vec<_>>()) / m as f64;
    let denominator = exec::ordered_sum(&per_path.iter().map(|v| v.1).collect::<Vec<_>>()) / m as f64;
    let ratio = if denominator > 0.0 { numerator / denominator } else { f64::INFINITY };
    Ok(AprioriReport { p, a, numerator, denominator, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::peano::PeanoFunction;
    use crate::solver::{ConcavePart, LipschitzPart};

    #[test]
    fn family_values_and_residuals() {
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let top = multiplicity_family(1.0, &grid).unwrap();
        assert_eq!(top.values[0], 0.25);
        assert!(top.max_residual < 1e-6);
        assert!(multiplicity_family(0.0, &grid).unwrap().values.iter().all(|v| *v == 0.0));
        assert_eq!(multiplicity_family(0.5, &grid).unwrap().values[50], 0.0);
        assert!(multiplicity_family(1.5, &grid).is_err());
    }

    #[test]
    fn envelope_examples() {
        let g = GeneratorSpec::peano(PeanoFunction::sqrt(), 1.0);
        let s = PointState::at_time(0.0, 1.0);
        let e1 = LipschitzEnvelope::new(&g, 1.0).unwrap();
        assert!((e1.value(&s, 0.0) - 0.25).abs() < 1e-12);
        let big = LipschitzEnvelope::new(&g, 1e6).unwrap();
        assert!((big.value(&s, 1.0) - 1.0).abs() < 1e-12);
        let lin = GeneratorSpec::peano(PeanoFunction::linear(2.0).unwrap(), 1.0);
        let el = LipschitzEnvelope::new(&lin, 3.0).unwrap();
        assert!((el.value(&s, 0.7) - 1.4).abs() < 1e-12);
        assert!(matches!(LipschitzEnvelope::new(&lin, 1.0), Err(SolverError::DivergentSup(_))));
    }

    #[test]
    fn closed_form_envelope_matches_numeric_sup() {
        let mut part = ConcavePart::new(PeanoFunction::make_family("rho6", &[("k", 1.0), ("alpha", 0.3)]).unwrap());
        part.multiplier = 1.5;
        part.scale = 2.0;
        part.shift = super::super::Coef::constant(0.01);
        let g = GeneratorSpec::new(1.0).with_concave(part.clone());
        let s = PointState::at_time(0.0, 1.0);
        for n in [1.0, 4.0, 20.0] {
            let env = LipschitzEnvelope::new(&g, n).unwrap();
            for x in [0.0, 0.001, 0.05, 0.3, 2.0] {
                let numeric = sup_convolution(|u| part.value(&s, u), n, x, 5.0);
                assert!((env.value(&s, x) - numeric).abs() < 1e-8, "n {n} x {x}: {} vs {numeric}", env.value(&s, x));
            }
        }
    }

    #[test]
    fn envelope_rejects_mixed_generators() {
        let g = GeneratorSpec::peano(PeanoFunction::sqrt(), 1.0).with_lipschitz(LipschitzPart { y_coef: 1.0, z_abs: 0.0, z_lin: vec![] });
        assert!(LipschitzEnvelope::new(&g, 2.0).is_err());
    }

    #[test]
    fn maximal_solution_from_zero_reaches_the_top_of_the_family() {
        let grid = TimeGrid::new(1.0, 400).unwrap();
        let ens = PathEnsemble::deterministic(grid, 1);
        let g = GeneratorSpec::peano(PeanoFunction::sqrt(), 1.0);
        let out = maximal_solution(&g, &[0.0], &ens, &DEFAULT_SCHEDULE, &SolverOptions::default()).unwrap();
        let y0 = out.field.y0();
        assert!((0.24..=0.26).contains(&y0), "{y0}");
        assert!(out.estimates.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn maximal_solution_agrees_with_unique_solution() {
        let grid = TimeGrid::new(1.0, 400).unwrap();
        let ens = PathEnsemble::deterministic(grid, 1);
        let g = GeneratorSpec::peano(PeanoFunction::sqrt(), 1.0);
        let out = maximal_solution(&g, &[1.0], &ens, &DEFAULT_SCHEDULE, &SolverOptions::default()).unwrap();
        assert!((out.field.y0() - 2.25).abs() < 5e-3, "{}", out.field.y0());
    }

    #[test]
    fn schedule_must_increase() {
        let ens = PathEnsemble::deterministic(TimeGrid::new(1.0, 4).unwrap(), 1);
        let g = GeneratorSpec::peano(PeanoFunction::sqrt(), 1.0);
        assert!(maximal_solution(&g, &[0.0], &ens, &[4.0, 2.0], &SolverOptions::default()).is_err());
    }

    #[test]
    fn apriori_ratio_for_constant_solution() {
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let ens = PathEnsemble::deterministic(grid, 1);
        let zero = GeneratorSpec::new(1.0);
        let sol = solve_backward_euler(&zero, &[1.0], &ens, &SolverOptions::default()).unwrap();
        let r = apriori_diagnostic(&sol, &ens, 2.0, 1.0, (0.0, 1.0), |_| 0.0).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-12);
        assert!(apriori_diagnostic(&sol, &ens, 2.0, 0.5, (0.0, 1.0), |_| 0.0).is_err());
    }
}
