//! Generators and the decomposition `g = f + f_bar + f_tilde` into a
//! concave Peano part, a one-sided monotone part and a Lipschitz part.

use crate::peano::{FunctionClass, PeanoFunction};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::SolverError;

/// Where a generator is evaluated: time, horizon, grid indices and `B_t`.
#[derive(Debug, Clone, Copy)]
pub struct PointState<'a> {
    pub t: f64,
    pub horizon: f64,
    pub step: usize,
    pub path: usize,
    pub b: &'a [f64],
}

impl<'a> PointState<'a> {
    pub fn at_time(t: f64, horizon: f64) -> PointState<'static> {
        PointState { t, horizon, step: 0, path: 0, b: &[] }
    }

    pub fn abs_b(&self) -> f64 {
        self.b.first().map(|v| v.abs()).unwrap_or(0.0)
    }
}

/// `g(t, y, z)`. Implementations accept any real `y` and handle their own
/// domain (the decomposed generator floors `y` at a small positive value).
pub trait Generator: Send + Sync {
    fn eval(&self, s: &PointState, y: f64, z: &[f64]) -> f64;
}

/// A generator from a closure.
pub struct FnGenerator<F>(pub F);

impl<F> Generator for FnGenerator<F>
where
    F: Fn(&PointState, f64, &[f64]) -> f64 + Send + Sync,
{
    fn eval(&self, s: &PointState, y: f64, z: &[f64]) -> f64 {
        (self.0)(s, y, z)
    }
}

/// An affine coefficient `c0 + ct t + cr (T - t) + cb |B^1_t|`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Coef {
    pub constant: f64,
    pub time: f64,
    pub time_to_go: f64,
    pub abs_b: f64,
}

impl Coef {
    pub fn constant(c: f64) -> Self {
        Coef { constant: c, ..Default::default() }
    }

    pub fn eval(&self, s: &PointState) -> f64 {
        let mut v = self.constant;
        if self.time != 0.0 {
            v += self.time * s.t;
        }
        if self.time_to_go != 0.0 {
            v += self.time_to_go * (s.horizon - s.t);
        }
        if self.abs_b != 0.0 {
            v += self.abs_b * s.abs_b();
        }
        v
    }

    pub fn is_constant(&self) -> bool {
        self.time == 0.0 && self.time_to_go == 0.0 && self.abs_b == 0.0
    }

    pub fn is_zero(&self) -> bool {
        *self == Coef::default()
    }

    pub fn depends_on_path(&self) -> bool {
        self.abs_b != 0.0
    }

    /// Infimum over `t in [0, T]` and `|B| >= 0` (minus infinity when the
    /// path coefficient is negative).
    pub fn lower_bound(&self, horizon: f64) -> f64 {
        let lin = |t: f64| self.constant + self.time * t + self.time_to_go * (horizon - t);
        let b = if self.abs_b < 0.0 { f64::NEG_INFINITY } else { 0.0 };
        lin(0.0).min(lin(horizon)) + b
    }

    /// `∫_0^t` of the deterministic part.
    pub fn integral_deterministic(&self, t: f64, horizon: f64) -> f64 {
        self.constant * t + self.time * t * t / 2.0 + self.time_to_go * (horizon * t - t * t / 2.0)
    }

    pub fn add(&self, other: &Coef) -> Coef {
        Coef {
            constant: self.constant + other.constant,
            time: self.time + other.time,
            time_to_go: self.time_to_go + other.time_to_go,
            abs_b: self.abs_b + other.abs_b,
        }
    }
}

impl fmt::Display for Coef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.constant != 0.0 || self.is_constant() {
            parts.push(format!("{}", self.constant));
        }
        for (v, name) in [(self.time, "t"), (self.time_to_go, "ttg"), (self.abs_b, "absb")] {
            if v != 0.0 {
                parts.push(format!("{v}*{name}"));
            }
        }
        f.write_str(&parts.join(" + "))
    }
}

impl FromStr for Coef {
    type Err = SolverError;

    /// Sums of terms `NUMBER`, `NUMBER*VAR` or `VAR`, where VAR is `t`,
    /// `ttg` (time to go) or `absb` (`|B_t|`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = Coef::default();
        // a minus sign starts a new term unless it belongs to an exponent
        let mut normalized = String::with_capacity(s.len() + 4);
        let mut prev = ' ';
        for ch in s.chars() {
            if ch == '-' && !matches!(prev, 'e' | 'E') {
                normalized.push('+');
            }
            normalized.push(ch);
            if !ch.is_whitespace() {
                prev = ch;
            }
        }
        for raw in normalized.split('+') {
            let term = raw.trim().replace(' ', "");
            if term.is_empty() {
                continue;
            }
            let (num, var) = match term.split_once('*') {
                Some((a, b)) => (a.to_string(), Some(b.to_string())),
                None if term.trim_start_matches('-').chars().next().is_some_and(|c| c.is_ascii_alphabetic()) => {
                    let neg = term.starts_with('-');
                    (if neg { "-1".into() } else { "1".into() }, Some(term.trim_start_matches('-').to_string()))
                }
                None => (term.clone(), None),
            };
            let v: f64 = num
                .parse()
                .map_err(|_| SolverError::InvalidParameter(format!("bad coefficient term '{term}' in '{s}'")))?;
            match var.as_deref() {
                None => out.constant += v,
                Some("t") => out.time += v,
                Some("ttg") => out.time_to_go += v,
                Some("absb") => out.abs_b += v,
                Some(other) => {
                    return Err(SolverError::InvalidParameter(format!("unknown variable '{other}' in '{s}'")))
                }
            }
        }
        Ok(out)
    }
}

/// `f(t, y) = additive(t) + multiplier * rho(scale * y + shift(t))`.
#[derive(Debug, Clone)]
pub struct ConcavePart {
    pub rho: PeanoFunction,
    pub multiplier: f64,
    pub scale: f64,
    pub shift: Coef,
    pub additive: Coef,
}

impl ConcavePart {
    pub fn new(rho: PeanoFunction) -> Self {
        ConcavePart { rho, multiplier: 1.0, scale: 1.0, shift: Coef::default(), additive: Coef::default() }
    }

    pub fn value(&self, s: &PointState, y: f64) -> f64 {
        self.additive.eval(s) + self.multiplier * self.rho.eval(self.scale * y + self.shift.eval(s))
    }

    /// `d f / d y`.
    pub fn slope(&self, s: &PointState, y: f64) -> f64 {
        self.multiplier * self.scale * self.rho.deriv(self.scale * y + self.shift.eval(s))
    }

    /// `sup_{y >= 0} (f(t, y) - q y)`.
    pub fn conjugate(&self, s: &PointState, q: f64) -> f64 {
        if !(q >= 0.0) {
            return f64::INFINITY;
        }
        let a = self.additive.eval(s);
        if self.multiplier == 0.0 {
            return a;
        }
        let h = self.shift.eval(s);
        let qq = q / (self.multiplier * self.scale);
        a + q * h / self.scale + self.multiplier * self.rho.conjugate_from(qq, h)
    }
}

/// Parts satisfying `sgn(y1 - y2) (f(y1) - f(y2)) <= beta_bar |y1 - y2|`.
#[derive(Clone)]
pub enum MonotonePart {
    Zero,
    /// `(1 - sqrt(y))^+`.
    RootDeficit,
    /// `1 + sin(y) + (3 - |B_t| y)^+`.
    OscillatingBarrier,
    Custom { name: String, f: Arc<dyn Fn(&PointState, f64) -> f64 + Send + Sync>, beta_bar: f64, cap: f64 },
}

impl fmt::Debug for MonotonePart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl MonotonePart {
    pub fn name(&self) -> String {
        match self {
            MonotonePart::Zero => "zero".into(),
            MonotonePart::RootDeficit => "root_deficit".into(),
            MonotonePart::OscillatingBarrier => "oscillating_barrier".into(),
            MonotonePart::Custom { name, .. } => format!("custom({name})"),
        }
    }

    pub fn value(&self, s: &PointState, y: f64) -> f64 {
        match self {
            MonotonePart::Zero => 0.0,
            MonotonePart::RootDeficit => (1.0 - y.max(0.0).sqrt()).max(0.0),
            MonotonePart::OscillatingBarrier => 1.0 + y.sin() + (3.0 - s.abs_b() * y).max(0.0),
            MonotonePart::Custom { f, .. } => f(s, y),
        }
    }

    /// Default `(beta_bar, cap)`.
    fn defaults(&self) -> (f64, f64) {
        match self {
            MonotonePart::Zero => (0.0, 0.0),
            MonotonePart::RootDeficit => (0.0, 1.0),
            MonotonePart::OscillatingBarrier => (1.0, 5.0),
            MonotonePart::Custom { beta_bar, cap, .. } => (*beta_bar, *cap),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, MonotonePart::Zero)
    }
}

/// `y_coef * y + z_abs * |z| + z_lin . z`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LipschitzPart {
    pub y_coef: f64,
    pub z_abs: f64,
    pub z_lin: Vec<f64>,
}

impl LipschitzPart {
    pub fn value(&self, y: f64, z: &[f64]) -> f64 {
        let mut v = self.y_coef * y;
        if self.z_abs != 0.0 {
            v += self.z_abs * z.iter().map(|c| c * c).sum::<f64>().sqrt();
        }
        for (a, b) in self.z_lin.iter().zip(z) {
            v += a * b;
        }
        v
    }

    pub fn is_zero(&self) -> bool {
        self.y_coef == 0.0 && self.z_abs == 0.0 && self.z_lin.iter().all(|v| *v == 0.0)
    }

    fn default_constants(&self) -> (f64, f64) {
        let lin = self.z_lin.iter().map(|v| v * v).sum::<f64>().sqrt();
        (self.y_coef.abs(), self.z_abs.abs() + lin)
    }
}

/// The generator together with the constants it claims to satisfy.
#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub concave: Option<ConcavePart>,
    pub monotone: MonotonePart,
    pub lipschitz: LipschitzPart,
    /// Reference function for the sandwich; defaults to `multiplier * rho(scale x)`.
    pub phi: Option<PeanoFunction>,
    /// Lower process `alpha_t`; defaults to the additive coefficient.
    pub floor: Option<Coef>,
    /// Constant with `alpha_t >= c`; defaults to the infimum of `floor`.
    pub c: Option<f64>,
    /// Upper process for the concave part.
    pub cap: Option<Coef>,
    pub beta: Option<f64>,
    pub lambda: f64,
    pub beta_bar: Option<f64>,
    pub monotone_cap: Option<Coef>,
    pub beta_tilde: Option<f64>,
    pub gamma: Option<f64>,
    pub horizon: f64,
    /// `y` is floored at this value wherever the slope of the concave part
    /// is needed.
    pub positivity_floor: f64,
}

impl GeneratorSpec {
    pub fn new(horizon: f64) -> Self {
        GeneratorSpec {
            concave: None,
            monotone: MonotonePart::Zero,
            lipschitz: LipschitzPart::default(),
            phi: None,
            floor: None,
            c: None,
            cap: None,
            beta: None,
            lambda: 1.0,
            beta_bar: None,
            monotone_cap: None,
            beta_tilde: None,
            gamma: None,
            horizon,
            positivity_floor: 1e-10,
        }
    }

    /// `g = rho(y)`.
    pub fn peano(rho: PeanoFunction, horizon: f64) -> Self {
        let mut g = GeneratorSpec::new(horizon);
        g.concave = Some(ConcavePart::new(rho));
        g
    }

    pub fn with_concave(mut self, part: ConcavePart) -> Self {
        self.concave = Some(part);
        self
    }

    pub fn with_monotone(mut self, part: MonotonePart) -> Self {
        self.monotone = part;
        self
    }

    pub fn with_lipschitz(mut self, part: LipschitzPart) -> Self {
        self.lipschitz = part;
        self
    }

    pub fn concave_value(&self, s: &PointState, y: f64) -> f64 {
        self.concave.as_ref().map(|c| c.value(s, y)).unwrap_or(0.0)
    }

    pub fn concave_slope(&self, s: &PointState, y: f64) -> f64 {
        self.concave.as_ref().map(|c| c.slope(s, y)).unwrap_or(0.0)
    }

    /// `f*(t, q) = sup_{y >= 0} (f(t, y) - q y)`.
    pub fn concave_conjugate(&self, s: &PointState, q: f64) -> f64 {
        match &self.concave {
            Some(c) => c.conjugate(s, q),
            None if q >= 0.0 => 0.0,
            None => f64::INFINITY,
        }
    }

    pub fn only_concave(&self) -> bool {
        self.monotone.is_zero() && self.lipschitz.is_zero()
    }

    pub fn phi(&self) -> Result<Option<PeanoFunction>, SolverError> {
        if let Some(p) = &self.phi {
            return Ok(Some(p.clone()));
        }
        match &self.concave {
            Some(c) => Ok(Some(c.rho.scaled(c.multiplier, c.scale)?)),
            None => Ok(None),
        }
    }

    pub fn floor_process(&self) -> Coef {
        self.floor.unwrap_or_else(|| self.concave.as_ref().map(|c| c.additive).unwrap_or_default())
    }

    pub fn c_constant(&self) -> f64 {
        self.c.unwrap_or_else(|| self.floor_process().lower_bound(self.horizon).max(0.0))
    }

    fn cap_and_beta(&self) -> (Coef, f64) {
        let Some(c) = &self.concave else { return (Coef::default(), 0.0) };
        let r1 = c.rho.eval(1.0);
        let default_cap = {
            let mut cap = c.additive;
            cap.constant += c.multiplier * r1;
            let sh = c.shift;
            cap.add(&Coef {
                constant: c.multiplier * r1 * sh.constant,
                time: c.multiplier * r1 * sh.time,
                time_to_go: c.multiplier * r1 * sh.time_to_go,
                abs_b: c.multiplier * r1 * sh.abs_b,
            })
        };
        (self.cap.unwrap_or(default_cap), self.beta.unwrap_or(c.multiplier * r1 * c.scale))
    }

    pub fn beta_tilde(&self) -> f64 {
        self.beta_tilde.unwrap_or_else(|| self.lipschitz.default_constants().0)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| self.lipschitz.default_constants().1)
    }

    pub fn beta_bar(&self) -> f64 {
        self.beta_bar.unwrap_or_else(|| self.monotone.defaults().0)
    }

    fn monotone_cap(&self) -> Coef {
        self.monotone_cap.unwrap_or_else(|| Coef::constant(self.monotone.defaults().1))
    }
}

impl GeneratorSpec {
    /// `f'(t, y)` with `y` floored at the positivity floor, where the slope
    /// of a Peano function is finite.
    pub fn floored_slope(&self, s: &PointState, y: f64) -> f64 {
        self.concave_slope(s, y.max(self.positivity_floor))
    }
}

impl Generator for GeneratorSpec {
    /// Negative `y` is evaluated at `0+`; every part is continuous there, so
    /// the floor is only needed for the slope.
    fn eval(&self, s: &PointState, y: f64, z: &[f64]) -> f64 {
        let y = y.max(0.0);
        self.concave_value(s, y) + self.monotone.value(s, y) + self.lipschitz.value(y, z)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditCheck {
    pub assumption: String,
    pub name: String,
    /// Largest violation found; a check passes when this is at most 1e-9.
    pub worst_slack: f64,
    pub witness: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub samples: usize,
    pub checks: Vec<AuditCheck>,
    pub pass: bool,
}

impl AuditReport {
    pub fn check(&self, name: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&AuditCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

/// The region sampled by the audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditBox {
    pub y_max: f64,
    pub z_max: f64,
    pub abs_b_max: f64,
    pub dim: usize,
}

impl Default for AuditBox {
    fn default() -> Self {
        AuditBox { y_max: 10.0, z_max: 5.0, abs_b_max: 3.0, dim: 1 }
    }
}

pub const AUDIT_TOL: f64 = 1e-9;

struct Tracker {
    worst: f64,
    witness: Vec<f64>,
}

impl Tracker {
    fn new() -> Self {
        Tracker { worst: f64::NEG_INFINITY, witness: Vec::new() }
    }

    fn record(&mut self, slack: f64, witness: &[f64]) {
        let slack = if slack.is_nan() { f64::INFINITY } else { slack };
        if slack > self.worst {
            self.worst = slack;
            self.witness = witness.to_vec();
        }
    }
}

fn uniform(rng: &mut ChaCha12Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Sample `budget` points in the box and report the worst slack of each
/// stated inequality. Lipschitz-type slacks are divided by the step size,
/// so a wrong constant shows up as the size of the excess.
pub fn assumption_audit(spec: &GeneratorSpec, budget: usize, bx: &AuditBox, seed: u64) -> Result<AuditReport, SolverError> {
    if budget < 1000 {
        return Err(SolverError::InvalidParameter(format!("audit budget {budget} is below 1000")));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let horizon = spec.horizon;
    let phi = spec.phi()?;
    let lambda = spec.lambda;
    let (cap, beta) = spec.cap_and_beta();
    let floor = spec.floor_process();
    let c = spec.c_constant();
    let beta_bar = spec.beta_bar();
    let mcap = spec.monotone_cap();
    let beta_tilde = spec.beta_tilde();
    let gamma = spec.gamma();
    let names: Vec<(&str, &str)> = vec![
        ("concave", "lower_sandwich"),
        ("concave", "upper_growth"),
        ("concave", "floor_above_c"),
        ("concave", "slope_nonnegative"),
        ("concave", "slope_bound"),
        ("concave", "concavity"),
        ("concave", "reference_class"),
        ("monotone", "one_sided_monotone"),
        ("monotone", "nonnegative"),
        ("monotone", "linear_growth"),
        ("lipschitz", "lipschitz"),
        ("lipschitz", "vanishes_at_origin"),
    ];
    let mut trackers: Vec<Tracker> = names.iter().map(|_| Tracker::new()).collect();
    let sample_y = |rng: &mut ChaCha12Rng| -> f64 {
        if uniform(rng) < 0.3 {
            10f64.powf(-8.0 + 8.0 * uniform(rng))
        } else {
            bx.y_max * uniform(rng)
        }
    };
    let dim = bx.dim.max(1);
    for _ in 0..budget {
        let t = horizon * uniform(&mut rng);
        let absb = bx.abs_b_max * uniform(&mut rng);
        let b = [absb];
        let s = PointState { t, horizon, step: 0, path: 0, b: &b };
        let y1 = sample_y(&mut rng);
        let y2 = sample_y(&mut rng);
        let z1: Vec<f64> = (0..dim).map(|_| bx.z_max * (2.0 * uniform(&mut rng) - 1.0)).collect();
        let z2: Vec<f64> = (0..dim).map(|_| bx.z_max * (2.0 * uniform(&mut rng) - 1.0)).collect();
        let w = [t, absb, y1, y2];
        if let Some(part) = &spec.concave {
            let f1 = part.value(&s, y1);
            let f2 = part.value(&s, y2);
            let phi_ref = phi.as_ref().expect("phi exists with a concave part");
            trackers[0].record(floor.eval(&s) + phi_ref.eval(y1) - f1, &w);
            trackers[1].record(f1 - cap.eval(&s) - beta * y1, &w);
            trackers[2].record(c - floor.eval(&s), &w);
            let d1 = part.slope(&s, y1);
            trackers[3].record(-d1, &w);
            let bound = lambda * phi_ref.deriv(y1);
            if bound.is_finite() {
                trackers[4].record((d1 - bound) / bound.max(1.0), &w);
            }
            let mid = part.value(&s, 0.5 * (y1 + y2));
            trackers[5].record(0.5 * (f1 + f2) - mid, &w);
        }
        if !spec.monotone.is_zero() {
            let g1 = spec.monotone.value(&s, y1);
            let g2 = spec.monotone.value(&s, y2);
            let dy = (y1 - y2).abs();
            if dy > 1e-6 {
                trackers[7].record(((y1 - y2).signum() * (g1 - g2) - beta_bar * dy) / dy, &w);
            }
            trackers[8].record(-g1, &w);
            trackers[9].record(g1 - mcap.eval(&s) - beta_bar * y1, &w);
        }
        if !spec.lipschitz.is_zero() {
            let l1 = spec.lipschitz.value(y1, &z1);
            let l2 = spec.lipschitz.value(y2, &z2);
            let dy = (y1 - y2).abs();
            let dz = z1.iter().zip(&z2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let step = dy + dz;
            if step > 1e-6 {
                trackers[10].record(((l1 - l2).abs() - beta_tilde * dy - gamma * dz) / step, &w);
            }
            let zero = vec![0.0; dim];
            trackers[11].record(spec.lipschitz.value(0.0, &zero).abs(), &w);
        }
    }
    if let Some(p) = &phi {
        let slack = match p.classify() {
            Ok(FunctionClass::Peano) => 0.0,
            _ => 1.0,
        };
        trackers[6].record(slack, &[]);
    }
    let checks: Vec<AuditCheck> = names
        .iter()
        .zip(trackers)
        .filter(|(_, tr)| tr.worst > f64::NEG_INFINITY)
        .map(|((a, n), tr)| AuditCheck {
            assumption: a.to_string(),
            name: n.to_string(),
            worst_slack: tr.worst,
            witness: tr.witness,
            pass: tr.worst <= AUDIT_TOL,
        })
        .collect();
    let pass = checks.iter().all(|c| c.pass);
    Ok(AuditReport { samples: budget, checks, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_parsing() {
        let c: Coef = "1 + 0.5*t - 2*ttg + absb".parse().unwrap();
        assert_eq!(c, Coef { constant: 1.0, time: 0.5, time_to_go: -2.0, abs_b: 1.0 });
        assert_eq!("2e-3*absb".parse::<Coef>().unwrap().abs_b, 2e-3);
        let c: Coef = "t".parse().unwrap();
        assert_eq!(c.time, 1.0);
        let again: Coef = c.to_string().parse().unwrap();
        assert_eq!(again, c);
        assert!("3*q".parse::<Coef>().is_err());
        assert_eq!("0".parse::<Coef>().unwrap(), Coef::default());
    }

    #[test]
    fn sqrt_generator_passes_audit() {
        let g = GeneratorSpec::peano(PeanoFunction::sqrt(), 1.0);
        let r = assumption_audit(&g, 2000, &AuditBox::default(), 1).unwrap();
        assert!(r.pass, "{:?}", r.failures());
    }

    #[test]
    fn root_deficit_passes_monotone_audit() {
        let g = GeneratorSpec::peano(PeanoFunction::sqrt(), 1.0).with_monotone(MonotonePart::RootDeficit);
        let r = assumption_audit(&g, 2000, &AuditBox::default(), 2).unwrap();
        assert!(r.pass, "{:?}", r.failures());
        assert!(r.check("one_sided_monotone").unwrap().pass);
    }

    #[test]
    fn understated_lipschitz_constant_fails() {
        let mut g = GeneratorSpec::new(1.0).with_lipschitz(LipschitzPart { y_coef: 2.0, z_abs: 1.0, z_lin: vec![] });
        g.beta_tilde = Some(1.0);
        let r = assumption_audit(&g, 5000, &AuditBox::default(), 3).unwrap();
        assert!(!r.pass);
        let slack = r.check("lipschitz").unwrap().worst_slack;
        assert!((slack - 1.0).abs() < 0.1, "slack {slack}");
    }

    #[test]
    fn small_budget_is_rejected() {
        let g = GeneratorSpec::peano(PeanoFunction::sqrt(), 1.0);
        assert!(assumption_audit(&g, 10, &AuditBox::default(), 1).is_err());
    }

    #[test]
    fn negative_values_evaluate_at_zero() {
        let g = GeneratorSpec::peano(PeanoFunction::sqrt(), 1.0);
        let s = PointState::at_time(0.0, 1.0);
        assert_eq!(g.eval(&s, -3.0, &[]), 0.0);
        assert!((g.floored_slope(&s, -3.0) - 0.5e5).abs() < 1e-6);
    }

    #[test]
    fn conjugate_of_shifted_and_offset_parts() {
        let mut part = ConcavePart::new(PeanoFunction::sqrt());
        part.additive = Coef::constant(1.0);
        let s = PointState::at_time(0.0, 1.0);
        assert!((part.conjugate(&s, 0.5) - 1.5).abs() < 1e-12);
        // sqrt(y + 1) with q = 1: the unconstrained maximiser lies below the shift
        part.additive = Coef::default();
        part.shift = Coef::constant(1.0);
        let direct = (0..200_000).map(|i| i as f64 * 1e-4).map(|y| (y + 1.0).sqrt() - y).fold(f64::MIN, f64::max);
        assert!((part.conjugate(&s, 1.0) - direct).abs() < 1e-9);
        let direct = (0..200_000).map(|i| i as f64 * 1e-3).map(|y| (y + 1.0).sqrt() - 0.2 * y).fold(f64::MIN, f64::max);
        assert!((part.conjugate(&s, 0.2) - direct).abs() < 1e-6);
    }
}
