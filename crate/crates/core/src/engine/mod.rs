//! Brownian path ensembles, least-squares conditional expectations,
//! Girsanov weights and terminal-value samplers.

mod regression;
mod terminal;

pub use regression::{conditional_expectation, BasisSpec, EventFeature, Projection, Regressor};
pub use terminal::TerminalSpec;

use crate::exec::{self, Execution};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("terminal value must be nonnegative, got {0}")]
    NegativeTerminal(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Uniform grid `t_i = i T / N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, EngineError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(EngineError::InvalidGrid(format!("horizon {horizon} must be positive")));
        }
        if steps == 0 {
            return Err(EngineError::InvalidGrid("need at least one step".into()));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.steps as f64
        }
    }

    /// Index of the node nearest to `t`.
    pub fn index_of(&self, t: f64) -> usize {
        ((t / self.dt()).round().max(0.0) as usize).min(self.steps)
    }
}

/// A table of values indexed by (time index, path) with `width` entries each.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    times: usize,
    paths: usize,
    width: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(times: usize, paths: usize, width: usize) -> Self {
        Field { times, paths, width, data: vec![0.0; times * paths * width] }
    }

    pub fn from_rows(times: usize, paths: usize, width: usize, data: Vec<f64>) -> Result<Self, EngineError> {
        if data.len() != times * paths * width {
            return Err(EngineError::DimensionMismatch(format!(
                "expected {} values, got {}",
                times * paths * width,
                data.len()
            )));
        }
        Ok(Field { times, paths, width, data })
    }

    pub fn times(&self) -> usize {
        self.times
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, i: usize, m: usize) -> &[f64] {
        let o = (i * self.paths + m) * self.width;
        &self.data[o..o + self.width]
    }

    pub fn get_mut(&mut self, i: usize, m: usize) -> &mut [f64] {
        let o = (i * self.paths + m) * self.width;
        &mut self.data[o..o + self.width]
    }

    pub fn scalar(&self, i: usize, m: usize) -> f64 {
        self.data[(i * self.paths + m) * self.width]
    }

    /// All paths at time index `i`, `paths * width` values.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.paths * self.width;
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.paths * self.width;
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Euclidean norm of the entry at `(i, m)`.
    pub fn norm(&self, i: usize, m: usize) -> f64 {
        self.get(i, m).iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// The standard normal drawn for `(seed, path, step, dim)`.
///
/// Each `(path, dim)` pair owns a ChaCha12 stream of the seed; draw `step`
/// uses words `4 step .. 4 step + 3` of that stream (Box-Muller on two
/// 53-bit uniforms). Paths are therefore identical whatever the ensemble
/// size or the order in which they are generated.
pub fn keyed_normal(seed: u64, path: usize, step: usize, dim: usize) -> f64 {
    let mut rng = stream(seed, path, dim);
    rng.set_word_pos(4 * step as u128);
    box_muller(&mut rng)
}

fn stream(seed: u64, path: usize, dim: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(((path as u64) << 16) | dim as u64);
    rng
}

fn box_muller(rng: &mut ChaCha12Rng) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * SCALE;
    let u2 = (rng.next_u64() >> 11) as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Brownian increments and positions on a time grid.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: TimeGrid,
    paths: usize,
    dim: usize,
    seed: u64,
    deterministic: bool,
    increments: Field,
    positions: Field,
}

impl PathEnsemble {
    /// Simulate `paths` independent `dim`-dimensional Brownian paths.
    pub fn simulate(grid: TimeGrid, paths: usize, dim: usize, seed: u64, exec: Execution) -> Result<Self, EngineError> {
        if paths == 0 || dim == 0 {
            return Err(EngineError::InvalidParameter("need at least one path and one dimension".into()));
        }
        if dim >= 1 << 16 {
            return Err(EngineError::InvalidParameter("dimension too large".into()));
        }
        let n = grid.steps();
        let sd = grid.dt().sqrt();
        let per_path: Vec<Vec<f64>> = exec::map_indices(exec, paths, |m| {
            let mut out = vec![0.0; n * dim];
            for k in 0..dim {
                let mut rng = stream(seed, m, k);
                for i in 0..n {
                    out[i * dim + k] = sd * box_muller(&mut rng);
                }
            }
            out
        });
        let mut increments = Field::zeros(n, paths, dim);
        let mut positions = Field::zeros(n + 1, paths, dim);
        for (m, inc) in per_path.iter().enumerate() {
            for i in 0..n {
                increments.get_mut(i, m).copy_from_slice(&inc[i * dim..(i + 1) * dim]);
            }
        }
        for i in 0..n {
            for m in 0..paths {
                for k in 0..dim {
                    let v = positions.get(i, m)[k] + increments.get(i, m)[k];
                    positions.get_mut(i + 1, m)[k] = v;
                }
            }
        }
        Ok(PathEnsemble { grid, paths, dim, seed, deterministic: false, increments, positions })
    }

    /// A single path with zero increments. Solvers treat it as the
    /// deterministic mode: conditional expectation is the identity and the
    /// martingale integrand vanishes.
    pub fn deterministic(grid: TimeGrid, dim: usize) -> Self {
        let n = grid.steps();
        PathEnsemble {
            grid,
            paths: 1,
            dim: dim.max(1),
            seed: 0,
            deterministic: true,
            increments: Field::zeros(n, 1, dim.max(1)),
            positions: Field::zeros(n + 1, 1, dim.max(1)),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    /// `B_{t_i}` on path `m`.
    pub fn position(&self, i: usize, m: usize) -> &[f64] {
        self.positions.get(i, m)
    }

    /// `B_{t_{i+1}} - B_{t_i}` on path `m`.
    pub fn increment(&self, i: usize, m: usize) -> &[f64] {
        self.increments.get(i, m)
    }

    pub fn positions(&self) -> &Field {
        &self.positions
    }

    pub fn increments(&self) -> &Field {
        &self.increments
    }

    /// Replace the increments from step `from` onwards, keeping the past.
    /// Used to check that estimators at earlier steps are adapted.
    pub fn with_future_replaced(&self, from: usize, seed: u64) -> Self {
        let mut out = self.clone();
        let sd = self.grid.dt().sqrt();
        for i in from..self.grid.steps() {
            for m in 0..self.paths {
                for k in 0..self.dim {
                    out.increments.get_mut(i, m)[k] = sd * keyed_normal(seed, m, i, k);
                }
            }
        }
        for i in from..self.grid.steps() {
            for m in 0..self.paths {
                for k in 0..self.dim {
                    let v = out.positions.get(i, m)[k] + out.increments.get(i, m)[k];
                    out.positions.get_mut(i + 1, m)[k] = v;
                }
            }
        }
        out
    }

    /// Columnar CSV: `step,path,b0,..` with positions at every node.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EngineError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "path".to_string()];
        header.extend((0..self.dim).map(|k| format!("b{k}")));
        w.write_record(&header)?;
        for i in 0..=self.grid.steps() {
            for m in 0..self.paths {
                let mut rec = vec![i.to_string(), m.to_string()];
                rec.extend(self.position(i, m).iter().map(|v| format!("{v}")));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Likelihood ratios `exp(∫ b dB - ½ ∫ |b|^2 dt)` accumulated along each path.
#[derive(Debug, Clone)]
pub struct GirsanovWeights {
    /// Log of the ratio up to each node; `times = N + 1`.
    pub log_cumulative: Field,
    /// Number of `(step, path)` entries whose drift norm exceeded the bound.
    pub clamped: usize,
}

impl GirsanovWeights {
    pub fn terminal(&self, m: usize) -> f64 {
        self.log_cumulative.scalar(self.log_cumulative.times() - 1, m).exp()
    }

    /// Ratio accumulated from node `i` to the horizon.
    pub fn from_step(&self, i: usize, m: usize) -> f64 {
        let last = self.log_cumulative.times() - 1;
        (self.log_cumulative.scalar(last, m) - self.log_cumulative.scalar(i, m)).exp()
    }

    pub fn terminal_weights(&self) -> Vec<f64> {
        (0..self.log_cumulative.paths()).map(|m| self.terminal(m)).collect()
    }
}

/// Girsanov weights for an adapted drift given per step (`times = N`,
/// `width = d`). Drifts whose norm exceeds `gamma` are scaled back onto
/// the ball and counted.
pub fn girsanov_weights(ens: &PathEnsemble, drift: &Field, gamma: f64, exec: Execution) -> Result<GirsanovWeights, EngineError> {
    let n = ens.grid().steps();
    if drift.times() != n || drift.paths() != ens.paths() || drift.width() != ens.dim() {
        return Err(EngineError::DimensionMismatch("drift must be N x M x d".into()));
    }
    if !(gamma >= 0.0) {
        return Err(EngineError::InvalidParameter("gamma must be nonnegative".into()));
    }
    let dt = ens.grid().dt();
    let per_path: Vec<(Vec<f64>, usize)> = exec::map_indices(exec, ens.paths(), |m| {
        let mut acc = 0.0;
        let mut logs = Vec::with_capacity(n + 1);
        logs.push(0.0);
        let mut clamped = 0;
        for i in 0..n {
            let b = drift.get(i, m);
            let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = if norm > gamma {
                clamped += 1;
                gamma / norm
            } else {
                1.0
            };
            let db = ens.increment(i, m);
            let dot: f64 = b.iter().zip(db).map(|(bk, dk)| scale * bk * dk).sum();
            acc += dot - 0.5 * (scale * norm).powi(2) * dt;
            logs.push(acc);
        }
        (logs, clamped)
    });
    let mut log_cumulative = Field::zeros(n + 1, ens.paths(), 1);
    let mut clamped = 0;
    for (m, (logs, c)) in per_path.into_iter().enumerate() {
        clamped += c;
        for (i, v) in logs.into_iter().enumerate() {
            log_cumulative.get_mut(i, m)[0] = v;
        }
    }
    Ok(GirsanovWeights { log_cumulative, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        let g = TimeGrid::new(2.0, 4).unwrap();
        assert_eq!(g.time(4), 2.0);
        assert_eq!(g.dt(), 0.5);
        assert_eq!(g.index_of(1.0), 2);
    }

    #[test]
    fn single_draw_is_the_keyed_normal_scaled() {
        let g = TimeGrid::new(2.0, 1).unwrap();
        let e = PathEnsemble::simulate(g, 1, 1, 42, Execution::Sequential).unwrap();
        assert_eq!(e.position(1, 0)[0], 2f64.sqrt() * keyed_normal(42, 0, 0, 0));
    }

    #[test]
    fn paths_do_not_depend_on_ensemble_size() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let small = PathEnsemble::simulate(g, 5, 2, 9, Execution::Sequential).unwrap();
        let large = PathEnsemble::simulate(g, 50, 2, 9, Execution::Parallel).unwrap();
        for m in 0..5 {
            for i in 0..=8 {
                assert_eq!(small.position(i, m), large.position(i, m));
            }
        }
    }

    #[test]
    fn terminal_variance_matches_horizon() {
        let g = TimeGrid::new(1.5, 100).unwrap();
        let e = PathEnsemble::simulate(g, 10_000, 1, 3, Execution::Parallel).unwrap();
        let vals: Vec<f64> = (0..10_000).map(|m| e.position(100, m)[0]).collect();
        let mean = vals.iter().sum::<f64>() / 1e4;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9_999.0;
        assert!((var / 1.5 - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn girsanov_weights_have_unit_mean_and_clamp() {
        let g = TimeGrid::new(1.0, 20).unwrap();
        let m = 10_000;
        let e = PathEnsemble::simulate(g, m, 1, 77, Execution::Parallel).unwrap();
        let mut drift = Field::zeros(20, m, 1);
        for i in 0..20 {
            for p in 0..m {
                drift.get_mut(i, p)[0] = 0.5 * e.position(i, p)[0].signum();
            }
        }
        let w = girsanov_weights(&e, &drift, 1.0, Execution::Parallel).unwrap();
        let mean = w.terminal_weights().iter().sum::<f64>() / m as f64;
        assert!((mean - 1.0).abs() < 5.0 / (m as f64).sqrt(), "mean {mean}");
        assert_eq!(w.clamped, 0);
        let w2 = girsanov_weights(&e, &drift, 0.25, Execution::Parallel).unwrap();
        assert!(w2.clamped > 0);
    }

    #[test]
    fn csv_has_header_and_all_nodes() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        let e = PathEnsemble::simulate(g, 3, 2, 1, Execution::Sequential).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,path,b0,b1\n"));
        assert_eq!(text.lines().count(), 1 + 3 * 3);
    }
}
