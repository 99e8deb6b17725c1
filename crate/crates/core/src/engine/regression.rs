//! Least-squares projection onto polynomials of the current Brownian
//! position.

use super::{EngineError, PathEnsemble};
use crate::exec::{self, Execution};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Ridge penalty used when the Gram matrix is numerically singular.
pub const RIDGE: f64 = 1e-8;

/// Indicator of `{B^1_time > threshold}` added as an interaction from
/// `time` onwards, so that terminal values depending on an intermediate
/// event stay representable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventFeature {
    pub time: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct BasisSpec {
    /// Total polynomial degree; `None` means 3 in one dimension, 2 otherwise.
    pub degree: Option<usize>,
    pub event: Option<EventFeature>,
    /// Rate `s` of a lognormal terminal value. Adds the columns
    /// `exp(s B^1_t - s^2 t / 2)` and `exp(s B^1_t / 2 - s^2 t / 8)`, the
    /// conditional means of `xi` and `sqrt(xi)` up to constants.
    pub exponential: Option<f64>,
}

impl BasisSpec {
    pub fn degree_for(&self, dim: usize) -> usize {
        self.degree.unwrap_or(if dim == 1 { 3 } else { 2 })
    }
}

/// Multi-indices of total degree at most `p` in `d` variables, constant first.
fn multi_indices(d: usize, p: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; d]];
    for total in 1..=p {
        let mut cur = vec![0; d];
        fill(&mut out, &mut cur, 0, total);
    }
    out
}

fn fill(out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, k: usize, left: usize) {
    if k + 1 == cur.len() {
        cur[k] = left;
        out.push(cur.clone());
        cur[k] = 0;
        return;
    }
    for a in (0..=left).rev() {
        cur[k] = a;
        fill(out, cur, k + 1, left - a);
    }
    cur[k] = 0;
}

/// Probabilists' Hermite polynomials `He_0..He_p` at `x`.
fn hermite(x: f64, p: usize, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if p >= 1 {
        out.push(x);
    }
    for n in 1..p {
        let next = x * out[n] - n as f64 * out[n - 1];
        out.push(next);
    }
}

/// A factorised design for one time step, reusable across targets.
#[derive(Debug, Clone)]
pub struct Regressor {
    identity: bool,
    paths: usize,
    cols: usize,
    design: Vec<f64>,
    factor: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    degraded: bool,
    exec: Execution,
    leverage: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Projection {
    /// Fitted values, one per path.
    pub values: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// Standard error of a fitted value, `sigma_res * sqrt(K / M)`.
    pub standard_error: f64,
    /// The ridge fallback was used.
    pub degraded: bool,
}

impl Regressor {
    /// Build the design at time index `step`. Coordinates are normalised
    /// by `sqrt(t)` so the Hermite columns are close to orthonormal.
    pub fn fit(ens: &PathEnsemble, step: usize, basis: &BasisSpec, exec: Execution) -> Result<Self, EngineError> {
        if step > ens.grid().steps() {
            return Err(EngineError::DimensionMismatch(format!("step {step} beyond grid")));
        }
        let m = ens.paths();
        if ens.is_deterministic() {
            return Ok(Regressor {
                identity: true,
                paths: m,
                cols: 0,
                design: Vec::new(),
                factor: None,
                degraded: false,
                exec,
                leverage: Vec::new(),
            });
        }
        let t = ens.grid().time(step);
        let d = ens.dim();
        let indices = if t > 0.0 { multi_indices(d, basis.degree_for(d)) } else { vec![vec![0; d]] };
        let event = basis.event.filter(|e| e.time > 0.0 && t >= e.time - 1e-12).map(|e| {
            let j = ens.grid().index_of(e.time);
            (j, e.threshold)
        });
        let base_cols = indices.len();
        let rate = basis.exponential.filter(|r| *r != 0.0 && t > 0.0);
        let cols = if event.is_some() { 2 * base_cols } else { base_cols } + if rate.is_some() { 2 } else { 0 };
        let scale = if t > 0.0 { 1.0 / t.sqrt() } else { 0.0 };
        let degree = indices.iter().flatten().copied().max().unwrap_or(0);
        let rows: Vec<Vec<f64>> = exec::map_indices(exec, m, |path| {
            let b = ens.position(step, path);
            let herm: Vec<Vec<f64>> = b
                .iter()
                .map(|&x| {
                    let mut h = Vec::with_capacity(degree + 1);
                    hermite(x * scale, degree, &mut h);
                    h
                })
                .collect();
            let mut row = Vec::with_capacity(cols);
            for idx in &indices {
                row.push(idx.iter().enumerate().map(|(k, &a)| herm[k][a]).product());
            }
            if let Some((j, thr)) = event {
                let on = if ens.position(j, path)[0] > thr { 1.0 } else { 0.0 };
                for c in 0..base_cols {
                    let v = row[c] * on;
                    row.push(v);
                }
            }
            if let Some(r) = rate {
                row.push((r * b[0] - 0.5 * r * r * t).exp());
                row.push((0.5 * r * b[0] - 0.125 * r * r * t).exp());
            }
            row
        });
        let design: Vec<f64> = rows.into_iter().flatten().collect();
        let mut gram = DMatrix::<f64>::zeros(cols, cols);
        for r in design.chunks(cols) {
            for a in 0..cols {
                for b in a..cols {
                    gram[(a, b)] += r[a] * r[b];
                }
            }
        }
        for a in 0..cols {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        gram /= m as f64;
        let max_diag = (0..cols).map(|a| gram[(a, a)]).fold(0.0, f64::max);
        let plain = gram.clone().cholesky().filter(|ch| {
            let l = ch.l_dirty();
            (0..cols).all(|a| l[(a, a)] * l[(a, a)] > 1e-12 * max_diag.max(1.0))
        });
        let (factor, degraded) = match plain {
            Some(f) => (Some(f), false),
            None => {
                let ridged = gram + DMatrix::<f64>::identity(cols, cols) * RIDGE;
                (ridged.cholesky(), true)
            }
        };
        let Some(chol) = factor.as_ref() else {
            return Err(EngineError::InvalidParameter("regression design could not be factorised".into()));
        };
        let leverage = exec::map_indices(exec, m, |p| {
            let x = DVector::from_column_slice(&design[p * cols..(p + 1) * cols]);
            x.dot(&chol.solve(&x))
        });
        Ok(Regressor { identity: false, paths: m, cols, design, factor, degraded, exec, leverage })
    }

    pub fn columns(&self) -> usize {
        self.cols
    }

    pub fn is_degraded(&self) -> bool {
        self.degraded
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// `x_p' G^{-1} x_p` with `G` the normalised Gram matrix; averages to
    /// the number of columns. Zero when the design is the identity.
    pub fn leverage(&self, path: usize) -> f64 {
        self.leverage.get(path).copied().unwrap_or(0.0)
    }

    /// Standard error of the fitted value at `path` given the step's
    /// overall standard error `sigma sqrt(K / M)`.
    pub fn pointwise_se(&self, path: usize, standard_error: f64) -> f64 {
        if self.identity || self.cols == 0 {
            return 0.0;
        }
        standard_error * (self.leverage(path) / self.cols as f64).sqrt()
    }

    /// Design matrix row for `path`.
    pub fn row(&self, path: usize) -> &[f64] {
        &self.design[path * self.cols..(path + 1) * self.cols]
    }

    pub fn project(&self, target: &[f64]) -> Result<Projection, EngineError> {
        if target.len() != self.paths {
            return Err(EngineError::DimensionMismatch(format!(
                "target has {} entries for {} paths",
                target.len(),
                self.paths
            )));
        }
        if self.identity {
            return Ok(Projection { values: target.to_vec(), coefficients: Vec::new(), standard_error: 0.0, degraded: false });
        }
        let k = self.cols;
        let mut rhs = DVector::<f64>::zeros(k);
        for (r, y) in self.design.chunks(k).zip(target) {
            for a in 0..k {
                rhs[a] += r[a] * y;
            }
        }
        rhs /= self.paths as f64;
        let coef = self.factor.as_ref().expect("factor exists").solve(&rhs);
        let coef: Vec<f64> = coef.iter().copied().collect();
        let values = exec::map_indices(self.exec, self.paths, |m| {
            self.row(m).iter().zip(&coef).map(|(x, c)| x * c).sum::<f64>()
        });
        let ss: f64 = values.iter().zip(target).map(|(v, y)| (y - v) * (y - v)).sum();
        let dof = self.paths.saturating_sub(k).max(1);
        let sigma = (ss / dof as f64).sqrt();
        let standard_error = sigma * (k as f64 / self.paths as f64).sqrt();
        Ok(Projection { values, coefficients: coef, standard_error, degraded: self.degraded })
    }
}

/// `E[target | F_{t_step}]` estimated by regression on the basis.
pub fn conditional_expectation(
    ens: &PathEnsemble,
    target: &[f64],
    basis: &BasisSpec,
    step: usize,
) -> Result<Projection, EngineError> {
    Regressor::fit(ens, step, basis, Execution::default())?.project(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::TimeGrid;

    fn ensemble(m: usize) -> PathEnsemble {
        PathEnsemble::simulate(TimeGrid::new(1.0, 10).unwrap(), m, 1, 5, Execution::Parallel).unwrap()
    }

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(1, 3).len(), 4);
        assert_eq!(multi_indices(2, 2).len(), 6);
        assert_eq!(multi_indices(3, 2).len(), 10);
    }

    #[test]
    fn constants_are_reproduced() {
        let e = ensemble(2000);
        let p = conditional_expectation(&e, &vec![7.0; 2000], &BasisSpec::default(), 4).unwrap();
        assert!(p.values.iter().all(|v| (v - 7.0).abs() < 1e-10));
    }

    #[test]
    fn martingale_projection() {
        let e = ensemble(10_000);
        let target: Vec<f64> = (0..10_000).map(|m| e.position(6, m)[0]).collect();
        let p = conditional_expectation(&e, &target, &BasisSpec::default(), 5).unwrap();
        let err: f64 = (0..10_000).map(|m| (p.values[m] - e.position(5, m)[0]).powi(2)).sum::<f64>() / 1e4;
        assert!(err.sqrt() < 0.02, "rms {}", err.sqrt());
    }

    #[test]
    fn squared_terminal_at_midpoint() {
        let e = ensemble(10_000);
        let target: Vec<f64> = (0..10_000).map(|m| e.position(10, m)[0].powi(2)).collect();
        let p = conditional_expectation(&e, &target, &BasisSpec::default(), 5).unwrap();
        let err: f64 = (0..10_000)
            .map(|m| (p.values[m] - e.position(5, m)[0].powi(2) - 0.5).powi(2))
            .sum::<f64>()
            / 1e4;
        assert!(err.sqrt() < 0.05, "rms {}", err.sqrt());
    }

    #[test]
    fn residual_is_orthogonal_to_columns() {
        let e = ensemble(3000);
        let target: Vec<f64> = (0..3000).map(|m| e.position(10, m)[0].sin()).collect();
        let r = Regressor::fit(&e, 7, &BasisSpec::default(), Execution::Sequential).unwrap();
        let p = r.project(&target).unwrap();
        for c in 0..r.columns() {
            let dot: f64 = (0..3000).map(|m| (target[m] - p.values[m]) * r.row(m)[c]).sum::<f64>() / 3000.0;
            assert!(dot.abs() < 1e-10, "column {c}: {dot}");
        }
    }

    #[test]
    fn estimate_uses_only_the_past() {
        let e = ensemble(1000);
        let other = e.with_future_replaced(5, 999);
        let target: Vec<f64> = (0..1000).map(|m| (m % 7) as f64).collect();
        let a = conditional_expectation(&e, &target, &BasisSpec::default(), 5).unwrap();
        let b = conditional_expectation(&other, &target, &BasisSpec::default(), 5).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn initial_step_reduces_to_the_mean() {
        let e = ensemble(500);
        let target: Vec<f64> = (0..500).map(|m| m as f64).collect();
        let p = conditional_expectation(&e, &target, &BasisSpec::default(), 0).unwrap();
        assert!((p.values[0] - 249.5).abs() < 1e-9);
    }

    #[test]
    fn singular_design_falls_back_to_ridge() {
        // a duplicated event column is collinear with the base columns
        let e = ensemble(400);
        let basis = BasisSpec { degree: Some(1), event: Some(EventFeature { time: 0.5, threshold: -1e9 }), exponential: None };
        let p = conditional_expectation(&e, &vec![1.0; 400], &basis, 8).unwrap();
        assert!(p.degraded);
        assert!((p.values[0] - 1.0).abs() < 1e-6);
    }
}
