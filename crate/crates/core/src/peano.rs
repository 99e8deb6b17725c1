//! Peano-type functions: the built-in families, Fenchel conjugates, tangent
//! controls and the transform `H_c(u) = ∫_0^u dx / (c + rho(x))`.
//!
//! Every function here is concave, nondecreasing and vanishes at zero. The
//! logarithmic families are only concave near zero, so they are defined by
//! their formula on `(0, eps]` and continued linearly with the left slope at
//! `eps`.

use crate::quad;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

pub const ABS_TOL: f64 = 1e-12;
pub const REL_TOL: f64 = 1e-9;
/// The conjugate is declared infinite when the objective still increases here.
pub const SEARCH_LIMIT: f64 = 1e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PeanoError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cutoff {eps} is outside the region where the {family} piece is increasing and concave")]
    InvalidCutoff { family: String, eps: f64 },
    #[error("tangent point must be positive, got {0}")]
    NonPositivePoint(f64),
    #[error("control grid is empty")]
    EmptyGrid,
    #[error("conjugate is infinite at every grid point")]
    AllInfinite,
    #[error("integral of 1/(c + rho) diverges at zero")]
    DivergentIntegral,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("classification inconclusive: {0}")]
    Inconclusive(String),
    #[error("only built-in families have a text form")]
    NotSerializable,
    #[error("cannot parse function description: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Rho1,
    Rho2,
    Rho3,
    Rho4,
    Rho5,
    Rho6,
    Rho7,
    Rho8,
    Rho9,
    Rho10,
    Custom,
}

impl Family {
    pub const BUILTIN: [Family; 10] = [
        Family::Rho1,
        Family::Rho2,
        Family::Rho3,
        Family::Rho4,
        Family::Rho5,
        Family::Rho6,
        Family::Rho7,
        Family::Rho8,
        Family::Rho9,
        Family::Rho10,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Rho1 => "rho1",
            Family::Rho2 => "rho2",
            Family::Rho3 => "rho3",
            Family::Rho4 => "rho4",
            Family::Rho5 => "rho5",
            Family::Rho6 => "rho6",
            Family::Rho7 => "rho7",
            Family::Rho8 => "rho8",
            Family::Rho9 => "rho9",
            Family::Rho10 => "rho10",
            Family::Custom => "custom",
        }
    }

    pub fn from_name(name: &str) -> Option<Family> {
        Family::BUILTIN
            .iter()
            .copied()
            .chain(std::iter::once(Family::Custom))
            .find(|f| f.name() == name)
    }

    /// Parameter names in text order.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::Rho1 => &["k"],
            Family::Rho2 | Family::Rho3 => &["beta", "eps"],
            Family::Rho4 | Family::Rho5 => &["alpha", "eps"],
            Family::Rho6 => &["k", "alpha"],
            Family::Rho7 => &["k", "alpha", "c"],
            Family::Rho8 | Family::Custom => &[],
            Family::Rho9 | Family::Rho10 => &["alpha", "k", "eps"],
        }
    }

    fn default_param(self, key: &str) -> Option<f64> {
        match (self, key) {
            (_, "eps") => None,
            (Family::Rho1, "k") | (Family::Rho6, "k") | (Family::Rho7, "k") => Some(1.0),
            (Family::Rho9, "k") | (Family::Rho10, "k") => Some(1.0),
            (Family::Rho2, "beta") | (Family::Rho3, "beta") => Some(1.0),
            (_, "alpha") => Some(0.5),
            (Family::Rho7, "c") => Some(1.0),
            _ => None,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionClass {
    Lipschitz,
    Osgood,
    Peano,
}

impl fmt::Display for FunctionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FunctionClass::Lipschitz => "lipschitz",
            FunctionClass::Osgood => "osgood",
            FunctionClass::Peano => "peano",
        };
        f.write_str(s)
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Linear { k: f64 },
    /// x L^p with L = -ln x
    LogPower { p: f64 },
    /// x L (ln L)^p
    LogLogPower { p: f64 },
    Power { k: f64, alpha: f64 },
    CappedPower { k: f64, alpha: f64, c: f64 },
    SqrtPlateau,
    PowerTimesLog { alpha: f64, k: f64 },
    PowerOverLog { alpha: f64, k: f64 },
    Custom { name: String, eval: ScalarFn, deriv: ScalarFn },
    Sum(Box<PeanoFunction>, Box<PeanoFunction>),
    Scaled { outer: f64, inner: f64, base: Box<PeanoFunction> },
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Cutoff {
    eps: f64,
    value: f64,
    slope: f64,
}

/// A concave nondecreasing function on `[0, inf)` with `rho(0) = 0`.
#[derive(Clone)]
pub struct PeanoFunction {
    family: Family,
    params: Vec<(String, f64)>,
    kind: Kind,
    cutoff: Option<Cutoff>,
}

impl fmt::Debug for PeanoFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PeanoFunction({})", self.describe())
    }
}

fn near_value(kind: &Kind, x: f64) -> f64 {
    let l = -x.ln();
    match *kind {
        Kind::LogPower { p } => x * l.powf(p),
        Kind::LogLogPower { p } => x * l * l.ln().powf(p),
        Kind::PowerTimesLog { alpha, k } => x.powf(alpha) * l.powf(k),
        Kind::PowerOverLog { alpha, k } => x.powf(alpha) / l.powf(k),
        _ => unreachable!("near piece only exists for logarithmic kinds"),
    }
}

fn near_slope(kind: &Kind, x: f64) -> f64 {
    let l = -x.ln();
    match *kind {
        Kind::LogPower { p } => l.powf(p - 1.0) * (l - p),
        Kind::LogLogPower { p } => {
            let m = l.ln();
            m.powf(p - 1.0) * ((l - 1.0) * m - p)
        }
        Kind::PowerTimesLog { alpha, k } => x.powf(alpha - 1.0) * l.powf(k - 1.0) * (alpha * l - k),
        Kind::PowerOverLog { alpha, k } => x.powf(alpha - 1.0) * l.powf(-k - 1.0) * (alpha * l + k),
        _ => unreachable!("near piece only exists for logarithmic kinds"),
    }
}

/// Sampled check that the near-zero piece is positive, increasing and
/// concave on `(0, eps]`.
fn near_piece_admissible(kind: &Kind, eps: f64) -> bool {
    if !(eps > 0.0 && eps < 1.0) {
        return false;
    }
    if matches!(kind, Kind::LogLogPower { .. }) && eps >= (-1.0f64).exp() {
        return false;
    }
    let mut prev: Option<f64> = None;
    for j in 0..=128 {
        let x = eps * 10f64.powf(-(j as f64) / 8.0);
        let v = near_value(kind, x);
        let d = near_slope(kind, x);
        if !(v > 0.0 && v.is_finite() && d > 0.0 && d.is_finite()) {
            return false;
        }
        if let Some(p) = prev {
            if d < p * (1.0 - 1e-12) {
                return false;
            }
        }
        prev = Some(d);
    }
    for j in 1..64 {
        let a = eps * (j - 1) as f64 / 64.0;
        let b = eps * (j + 1) as f64 / 64.0;
        let m = eps * j as f64 / 64.0;
        let va = if a > 0.0 { near_value(kind, a) } else { 0.0 };
        if near_value(kind, m) < 0.5 * (va + near_value(kind, b)) - 1e-15 {
            return false;
        }
    }
    true
}

fn check_range(name: &str, v: f64, lo: f64, hi: f64, open_lo: bool, open_hi: bool) -> Result<(), PeanoError> {
    let ok_lo = if open_lo { v > lo } else { v >= lo };
    let ok_hi = if open_hi { v < hi } else { v <= hi };
    if v.is_finite() && ok_lo && ok_hi {
        Ok(())
    } else {
        Err(PeanoError::InvalidParameter(format!("{name} = {v} out of range")))
    }
}

impl PeanoFunction {
    /// Build a built-in family from named parameters; missing parameters take
    /// their defaults.
    pub fn make_family(name: &str, params: &[(&str, f64)]) -> Result<Self, PeanoError> {
        let family = Family::from_name(name)
            .filter(|f| *f != Family::Custom)
            .ok_or_else(|| PeanoError::InvalidParameter(format!("unknown family '{name}'")))?;
        let mut map = BTreeMap::new();
        for (k, v) in params {
            map.insert(k.to_string(), *v);
        }
        Self::from_family(family, &map)
    }

    pub fn from_family(family: Family, params: &BTreeMap<String, f64>) -> Result<Self, PeanoError> {
        let names = family.param_names();
        for key in params.keys() {
            if !names.contains(&key.as_str()) {
                return Err(PeanoError::InvalidParameter(format!(
                    "{family} has no parameter '{key}'"
                )));
            }
        }
        let get = |key: &str| -> Result<f64, PeanoError> {
            params
                .get(key)
                .copied()
                .or_else(|| family.default_param(key))
                .ok_or_else(|| PeanoError::InvalidParameter(format!("{family} needs '{key}'")))
        };
        let (kind, near) = match family {
            Family::Rho1 => {
                let k = get("k")?;
                check_range("k", k, 0.0, f64::INFINITY, true, true)?;
                (Kind::Linear { k }, false)
            }
            Family::Rho2 | Family::Rho3 => {
                let p = get("beta")?;
                check_range("beta", p, 1.0, f64::INFINITY, false, true)?;
                if family == Family::Rho2 {
                    (Kind::LogPower { p }, true)
                } else {
                    (Kind::LogLogPower { p }, true)
                }
            }
            Family::Rho4 | Family::Rho5 => {
                let p = get("alpha")?;
                check_range("alpha", p, 0.0, 1.0, true, true)?;
                if family == Family::Rho4 {
                    (Kind::LogPower { p }, true)
                } else {
                    (Kind::LogLogPower { p }, true)
                }
            }
            Family::Rho6 => {
                let k = get("k")?;
                let alpha = get("alpha")?;
                check_range("k", k, 0.0, f64::INFINITY, true, true)?;
                check_range("alpha", alpha, 0.0, 1.0, true, true)?;
                (Kind::Power { k, alpha }, false)
            }
            Family::Rho7 => {
                let k = get("k")?;
                let alpha = get("alpha")?;
                let c = get("c")?;
                check_range("k", k, 0.0, f64::INFINITY, true, true)?;
                check_range("alpha", alpha, 0.0, 1.0, true, true)?;
                check_range("c", c, 0.0, f64::INFINITY, true, true)?;
                (Kind::CappedPower { k, alpha, c }, false)
            }
            Family::Rho8 => (Kind::SqrtPlateau, false),
            Family::Rho9 | Family::Rho10 => {
                let alpha = get("alpha")?;
                let k = get("k")?;
                check_range("alpha", alpha, 0.0, 1.0, true, true)?;
                check_range("k", k, 0.0, f64::INFINITY, true, true)?;
                if family == Family::Rho9 {
                    (Kind::PowerTimesLog { alpha, k }, true)
                } else {
                    (Kind::PowerOverLog { alpha, k }, true)
                }
            }
            Family::Custom => {
                return Err(PeanoError::InvalidParameter(
                    "custom functions are built with PeanoFunction::custom".into(),
                ))
            }
        };
        let mut out = Vec::new();
        let mut cutoff = None;
        if near {
            let eps = match params.get("eps") {
                Some(&eps) => {
                    if !near_piece_admissible(&kind, eps) {
                        return Err(PeanoError::InvalidCutoff { family: family.name().into(), eps });
                    }
                    eps
                }
                None => default_cutoff(&kind).ok_or_else(|| PeanoError::InvalidCutoff {
                    family: family.name().into(),
                    eps: f64::NAN,
                })?,
            };
            cutoff = Some(Cutoff { eps, value: near_value(&kind, eps), slope: near_slope(&kind, eps) });
        }
        for name in names {
            let v = if *name == "eps" { cutoff.map(|c| c.eps).unwrap_or(f64::NAN) } else { get(name)? };
            out.push((name.to_string(), v));
        }
        Ok(PeanoFunction { family, params: out, kind, cutoff })
    }

    pub fn linear(k: f64) -> Result<Self, PeanoError> {
        Self::make_family("rho1", &[("k", k)])
    }

    /// `k x^alpha`.
    pub fn power(k: f64, alpha: f64) -> Result<Self, PeanoError> {
        Self::make_family("rho6", &[("k", k), ("alpha", alpha)])
    }

    pub fn sqrt() -> Self {
        Self::power(1.0, 0.5).expect("valid parameters")
    }

    /// A user-supplied function with its derivative. The caller is
    /// responsible for concavity; `classify` and the property checks can be
    /// used to audit it.
    pub fn custom<F, D>(name: &str, eval: F, deriv: D) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        PeanoFunction {
            family: Family::Custom,
            params: Vec::new(),
            kind: Kind::Custom { name: name.to_string(), eval: Arc::new(eval), deriv: Arc::new(deriv) },
            cutoff: None,
        }
    }

    /// Pointwise sum; the class is closed under addition.
    pub fn sum(a: &PeanoFunction, b: &PeanoFunction) -> Self {
        PeanoFunction {
            family: Family::Custom,
            params: Vec::new(),
            kind: Kind::Sum(Box::new(a.clone()), Box::new(b.clone())),
            cutoff: None,
        }
    }

    /// `outer * rho(inner * x)`.
    pub fn scaled(&self, outer: f64, inner: f64) -> Result<Self, PeanoError> {
        check_range("outer", outer, 0.0, f64::INFINITY, true, true)?;
        check_range("inner", inner, 0.0, f64::INFINITY, true, true)?;
        match self.kind {
            Kind::Power { k, alpha } => Self::power(k * outer * inner.powf(alpha), alpha),
            Kind::Linear { k } => Self::linear(k * outer * inner),
            _ if outer == 1.0 && inner == 1.0 => Ok(self.clone()),
            _ => Ok(PeanoFunction {
                family: Family::Custom,
                params: Vec::new(),
                kind: Kind::Scaled { outer, inner, base: Box::new(self.clone()) },
                cutoff: None,
            }),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Parameters in text order (empty for custom functions).
    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    /// The cutoff of a logarithmic family.
    pub fn cutoff(&self) -> Option<f64> {
        self.cutoff.map(|c| c.eps)
    }

    /// `Some((k, alpha))` when the function is exactly `k x^alpha`.
    pub fn as_power(&self) -> Option<(f64, f64)> {
        match self.kind {
            Kind::Power { k, alpha } => Some((k, alpha)),
            _ => None,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if let Some(cut) = self.cutoff {
            if x > cut.eps {
                return cut.value + cut.slope * (x - cut.eps);
            }
            return near_value(&self.kind, x);
        }
        match &self.kind {
            Kind::Linear { k } => k * x,
            Kind::Power { k, alpha } => k * x.powf(*alpha),
            Kind::CappedPower { k, alpha, c } => {
                if x <= *c {
                    k * x.powf(*alpha)
                } else {
                    k * c.powf(*alpha) + k * alpha * c.powf(alpha - 1.0) * (x - c)
                }
            }
            Kind::SqrtPlateau => {
                if x <= 1.0 {
                    x.sqrt()
                } else if x < 2.0 {
                    -x * x / 4.0 + x + 0.25
                } else {
                    1.25
                }
            }
            Kind::Custom { eval, .. } => eval(x),
            Kind::Sum(a, b) => a.eval(x) + b.eval(x),
            Kind::Scaled { outer, inner, base } => outer * base.eval(inner * x),
            _ => unreachable!("logarithmic kinds always carry a cutoff"),
        }
    }

    /// Derivative; at zero this is `f64::INFINITY` for every family whose
    /// slope blows up there.
    pub fn deriv(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return self.slope_at_zero();
        }
        if let Some(cut) = self.cutoff {
            if x > cut.eps {
                return cut.slope;
            }
            return near_slope(&self.kind, x);
        }
        match &self.kind {
            Kind::Linear { k } => *k,
            Kind::Power { k, alpha } => k * alpha * x.powf(alpha - 1.0),
            Kind::CappedPower { k, alpha, c } => k * alpha * x.min(*c).powf(alpha - 1.0),
            Kind::SqrtPlateau => {
                if x <= 1.0 {
                    0.5 / x.sqrt()
                } else if x < 2.0 {
                    1.0 - x / 2.0
                } else {
                    0.0
                }
            }
            Kind::Custom { deriv, .. } => deriv(x),
            Kind::Sum(a, b) => a.deriv(x) + b.deriv(x),
            Kind::Scaled { outer, inner, base } => outer * inner * base.deriv(inner * x),
            _ => unreachable!("logarithmic kinds always carry a cutoff"),
        }
    }

    fn slope_at_zero(&self) -> f64 {
        match &self.kind {
            Kind::Linear { k } => *k,
            Kind::Custom { deriv, .. } => deriv(0.0),
            Kind::Sum(a, b) => a.slope_at_zero() + b.slope_at_zero(),
            Kind::Scaled { outer, inner, base } => outer * inner * base.slope_at_zero(),
            _ => f64::INFINITY,
        }
    }

    /// Limit of the slope at infinity.
    pub fn asymptotic_slope(&self) -> f64 {
        if let Some(cut) = self.cutoff {
            return cut.slope;
        }
        match &self.kind {
            Kind::Linear { k } => *k,
            Kind::Power { .. } | Kind::SqrtPlateau => 0.0,
            Kind::CappedPower { k, alpha, c } => k * alpha * c.powf(alpha - 1.0),
            Kind::Custom { deriv, .. } => deriv(SEARCH_LIMIT),
            Kind::Sum(a, b) => a.asymptotic_slope() + b.asymptotic_slope(),
            Kind::Scaled { outer, inner, base } => outer * inner * base.asymptotic_slope(),
            _ => unreachable!(),
        }
    }

    /// Points where the formula changes.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = match &self.kind {
            _ if self.cutoff.is_some() => vec![self.cutoff.map(|c| c.eps).unwrap_or_default()],
            Kind::CappedPower { c, .. } => vec![*c],
            Kind::SqrtPlateau => vec![1.0, 2.0],
            Kind::Sum(a, b) => {
                let mut v = a.breakpoints();
                v.extend(b.breakpoints());
                v
            }
            Kind::Scaled { inner, base, .. } => base.breakpoints().into_iter().map(|b| b / inner).collect(),
            _ => Vec::new(),
        };
        out.sort_by(|a, b| a.total_cmp(b));
        out.dedup();
        out
    }

    /// A point attaining `sup_{x >= 0} (rho(x) - q x)`, or `None` when the
    /// supremum is infinite.
    pub fn argmax(&self, q: f64) -> Option<f64> {
        if !(q >= 0.0) {
            return None;
        }
        match &self.kind {
            Kind::Linear { k } => (q >= *k).then_some(0.0),
            Kind::Power { k, alpha } => (q > 0.0).then(|| (k * alpha / q).powf(1.0 / (1.0 - alpha))),
            Kind::CappedPower { k, alpha, c } => {
                let sc = k * alpha * c.powf(alpha - 1.0);
                if q < sc {
                    None
                } else {
                    Some((k * alpha / q).powf(1.0 / (1.0 - alpha)).min(*c))
                }
            }
            Kind::Scaled { outer, inner, base } => base.argmax(q / (outer * inner)).map(|y| y / inner),
            _ => self.argmax_numeric(q),
        }
    }

    /// Bisection on the nonincreasing derivative for `sup {x : rho'(x) > q}`.
    fn argmax_numeric(&self, q: f64) -> Option<f64> {
        if self.deriv(SEARCH_LIMIT) > q {
            return None;
        }
        let mut lo = 1e-300;
        if self.deriv(lo) <= q {
            return Some(0.0);
        }
        let mut hi = SEARCH_LIMIT;
        for _ in 0..400 {
            if hi - lo <= 1e-16 * hi {
                break;
            }
            let mid = if hi > 4.0 * lo { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
            if self.deriv(mid) > q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    /// Fenchel conjugate `sup_{x >= 0} (rho(x) - q x)`; `f64::INFINITY` when
    /// the supremum diverges.
    pub fn conjugate(&self, q: f64) -> f64 {
        match (&self.kind, self.argmax(q)) {
            (_, None) => f64::INFINITY,
            (Kind::Power { k, alpha }, Some(x)) => (1.0 - alpha) * k * x.powf(*alpha),
            (Kind::Linear { .. }, Some(_)) => 0.0,
            (_, Some(x)) => self.eval(x) - q * x,
        }
    }

    /// `sup_{x >= lower} (rho(x) - q x)`.
    pub fn conjugate_from(&self, q: f64, lower: f64) -> f64 {
        if lower <= 0.0 {
            return self.conjugate(q);
        }
        match self.argmax(q) {
            None => f64::INFINITY,
            Some(x) if x >= lower => self.conjugate(q),
            Some(_) => self.eval(lower) - q * lower,
        }
    }

    /// `min_{q in grid} (rho*(q) + q x)`, skipping grid points where the
    /// conjugate is infinite.
    pub fn inf_representation(&self, x: f64, q_grid: &[f64]) -> Result<f64, PeanoError> {
        if q_grid.is_empty() {
            return Err(PeanoError::EmptyGrid);
        }
        q_grid
            .iter()
            .map(|&q| self.conjugate(q) + q * x)
            .filter(|v| v.is_finite())
            .min_by(|a, b| a.total_cmp(b))
            .ok_or(PeanoError::AllInfinite)
    }

    /// The control attaining the infimum at `x0`, i.e. the slope there.
    pub fn tangent_control(&self, x0: f64) -> Result<f64, PeanoError> {
        if !(x0 > 0.0) {
            return Err(PeanoError::NonPositivePoint(x0));
        }
        Ok(self.deriv(x0))
    }

    /// Lipschitz if `rho(x)/x` stays bounded at zero; otherwise Osgood or
    /// Peano according to whether `∫_0 dx/rho` diverges.
    ///
    /// The integral test works in the variable `v = ln ln ln(1/x)` where two
    /// levels of condensation turn every slowly varying tail into a
    /// measurable exponential rate. It is evaluated near the bottom of the
    /// double range and one decade of `ln(1/x)` earlier; the two readings
    /// must agree.
    pub fn classify(&self) -> Result<FunctionClass, PeanoError> {
        let ratio = |x: f64| self.eval(x) / x;
        let (r8, r10, r12) = (ratio(1e-8), ratio(1e-10), ratio(1e-12));
        if !(r8.is_finite() && r10.is_finite() && r12.is_finite() && r8 > 0.0) {
            return Err(PeanoError::Inconclusive("rho(x)/x is not finite and positive near zero".into()));
        }
        let g1 = r10 / r8 - 1.0;
        let g2 = r12 / r10 - 1.0;
        let bounded = 1e-3;
        if g1.abs() < bounded && g2.abs() < bounded {
            return Ok(FunctionClass::Lipschitz);
        }
        if !(g1 > bounded && g2 > bounded) {
            return Err(PeanoError::Inconclusive(format!(
                "rho(x)/x growth disagrees across decades ({g1:.3e}, {g2:.3e})"
            )));
        }
        let rate_top = self.condensed_decay_rate(700.0);
        let rate_low = self.condensed_decay_rate(50.0);
        match (rate_top, rate_low) {
            (Some(a), Some(b)) if a > 0.5 && b > 0.5 => Ok(FunctionClass::Peano),
            (Some(a), Some(b)) if a < 0.1 && b < 0.1 => Ok(FunctionClass::Osgood),
            (a, b) => Err(PeanoError::Inconclusive(format!(
                "integral tail rates disagree or fall in the undecided band ({a:?}, {b:?})"
            ))),
        }
    }

    /// Decay rate of `e^v e^u h(e^u)` in `v`, where `u = e^v`, `s = e^u`,
    /// `x = e^{-s}` and `h = x / rho(x)`, evaluated at `s = s_top`.
    fn condensed_decay_rate(&self, s_top: f64) -> Option<f64> {
        let log_m2 = |v: f64| -> f64 {
            let u = v.exp();
            let s = u.exp();
            let x = (-s).exp();
            let r = self.eval(x);
            v + u - s - r.ln()
        };
        let v1 = s_top.ln().ln();
        let dv = 0.02;
        let (a, b) = (log_m2(v1), log_m2(v1 - dv));
        let rate = -(a - b) / dv;
        rate.is_finite().then_some(rate)
    }

    /// `∫_0^a dx/(c + rho(x))` through `x = a e^{-s}` with a fitted tail.
    fn head_integral(&self, c: f64, a: f64) -> f64 {
        let h = |s: f64| -> f64 {
            let x = a * (-s).exp();
            x / (c + self.eval(x))
        };
        // keep x above the smallest normal numbers
        let s_max = (a.ln() + 700.0).max(1.0);
        let body = quad::adaptive(&h, 0.0, s_max, 1e-13);
        let h_end = h(s_max);
        if h_end == 0.0 {
            return body;
        }
        let kappa = (h(s_max - 1.0) / h_end).ln();
        let tail = if kappa > 1e-3 {
            h_end / kappa
        } else {
            let p = (h(0.5 * s_max) / h_end).ln() / 2f64.ln();
            if p > 1.0 {
                h_end * s_max / (p - 1.0)
            } else {
                f64::INFINITY
            }
        };
        body + tail
    }

    fn h_unchecked(&self, c: f64, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        match self.kind {
            Kind::Power { k, alpha } if c == 0.0 => return u.powf(1.0 - alpha) / (k * (1.0 - alpha)),
            Kind::Linear { k } if c > 0.0 => return (k * u / c).ln_1p() / k,
            _ => {}
        }
        let mut pts: Vec<f64> = self.breakpoints().into_iter().filter(|&b| b > 0.0 && b < u).collect();
        pts.push(u);
        let f = |x: f64| 1.0 / (c + self.eval(x));
        let mut total = self.head_integral(c, pts[0]);
        for w in pts.windows(2) {
            total += quad::adaptive(&f, w[0], w[1], 1e-13);
        }
        total
    }

    fn check_h_domain(&self, c: f64) -> Result<(), PeanoError> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(PeanoError::InvalidParameter(format!("c = {c} must be nonnegative")));
        }
        if c == 0.0 && self.classify()? != FunctionClass::Peano {
            return Err(PeanoError::DivergentIntegral);
        }
        Ok(())
    }

    /// `H_c(u) = ∫_0^u dx/(c + rho(x))`.
    pub fn integral_h(&self, c: f64, u: f64) -> Result<f64, PeanoError> {
        if !(u >= 0.0 && u.is_finite()) {
            return Err(PeanoError::InvalidParameter(format!("u = {u} must be nonnegative")));
        }
        self.check_h_domain(c)?;
        Ok(self.h_unchecked(c, u))
    }

    /// Inverse of `H_c` by bisection, bracketed with the linear growth bound
    /// `rho(x) <= rho(1)(1 + x)`.
    pub fn inverse_h(&self, c: f64, v: f64) -> Result<f64, PeanoError> {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(PeanoError::InvalidParameter(format!("v = {v} must be nonnegative")));
        }
        self.check_h_domain(c)?;
        if v == 0.0 {
            return Ok(0.0);
        }
        match self.kind {
            Kind::Power { k, alpha } if c == 0.0 => {
                return Ok((v * k * (1.0 - alpha)).powf(1.0 / (1.0 - alpha)))
            }
            Kind::Linear { k } if c > 0.0 => return Ok(c / k * (k * v).exp_m1()),
            _ => {}
        }
        let r1 = self.eval(1.0);
        let mut hi = (c + r1) * (r1 * v).exp_m1() / r1;
        if !hi.is_finite() {
            return Err(PeanoError::InvalidParameter(format!("v = {v} overflows the bracket")));
        }
        while self.h_unchecked(c, hi) < v {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            if hi - lo <= 1e-15 * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.h_unchecked(c, mid) < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Both growth estimates for the inverse transform.
    pub fn growth_bound_check(&self, c: f64, k1: f64, k2: f64, k3: f64) -> Result<GrowthBoundReport, PeanoError> {
        if !(k2 > 0.0 && k3 > 0.0) {
            return Err(PeanoError::Precondition("k2 and k3 must be positive".into()));
        }
        let h1 = self.integral_h(c, 1.0)?;
        if k1 < h1 * (1.0 - 1e-12) {
            return Err(PeanoError::Precondition(format!("k1 = {k1} is below H_c(1) = {h1}")));
        }
        let inv_sum = self.inverse_h(c, k1 + k2)?;
        let inv_k1 = self.inverse_h(c, k1)?;
        Ok(self.growth_report(c, k2, k3, inv_sum, inv_k1))
    }

    fn growth_report(&self, c: f64, k2: f64, k3: f64, inv_sum: f64, inv_k1: f64) -> GrowthBoundReport {
        let factor = 2.0 * (k2 * (self.eval(1.0) + c)).exp();
        let lhs_a = inv_sum;
        let rhs_a = factor * inv_k1;
        let lhs_b = c + self.eval(k3 * inv_sum);
        let rhs_b = factor * (c + self.eval(k3 * inv_k1));
        let pass = lhs_a <= rhs_a * (1.0 + REL_TOL) + ABS_TOL && lhs_b <= rhs_b * (1.0 + REL_TOL) + ABS_TOL;
        GrowthBoundReport { lhs_a, rhs_a, lhs_b, rhs_b, pass }
    }

    /// Text form `family=rho6 k=1 alpha=0.5`.
    pub fn to_text(&self) -> Result<String, PeanoError> {
        if self.family == Family::Custom {
            return Err(PeanoError::NotSerializable);
        }
        let mut s = format!("family={}", self.family);
        for (k, v) in &self.params {
            s.push_str(&format!(" {k}={v}"));
        }
        Ok(s)
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            Kind::Custom { name, .. } => format!("custom({name})"),
            Kind::Sum(a, b) => format!("sum({}, {})", a.describe(), b.describe()),
            Kind::Scaled { outer, inner, base } => format!("{outer}*[{}]({inner}x)", base.describe()),
            _ => self.to_text().unwrap_or_default(),
        }
    }
}

fn default_cutoff(kind: &Kind) -> Option<f64> {
    (2..=60).map(|n| (-(n as f64)).exp()).find(|&eps| near_piece_admissible(kind, eps))
}

impl FromStr for PeanoFunction {
    type Err = PeanoError;

    /// Accepts `family=NAME key=value ...`; separators may be spaces,
    /// commas or semicolons, and a bare leading name is read as the family.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut family = None;
        let mut params = BTreeMap::new();
        for (i, tok) in s.split(|c: char| c.is_whitespace() || c == ',' || c == ';').filter(|t| !t.is_empty()).enumerate() {
            match tok.split_once('=') {
                Some(("family", name)) => family = Some(name.trim().to_string()),
                Some((k, v)) => {
                    let v: f64 = v.trim().parse().map_err(|_| PeanoError::Parse(format!("bad number in '{tok}'")))?;
                    params.insert(k.trim().to_string(), v);
                }
                None if i == 0 => family = Some(tok.to_string()),
                None => return Err(PeanoError::Parse(format!("expected key=value, got '{tok}'"))),
            }
        }
        let name = family.ok_or_else(|| PeanoError::Parse("missing family".into()))?;
        let fam = Family::from_name(&name)
            .filter(|f| *f != Family::Custom)
            .ok_or_else(|| PeanoError::Parse(format!("unknown family '{name}'")))?;
        PeanoFunction::from_family(fam, &params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthBoundReport {
    pub lhs_a: f64,
    pub rhs_a: f64,
    pub lhs_b: f64,
    pub rhs_b: f64,
    pub pass: bool,
}

/// Tabulated `H_c` and its inverse for bulk evaluation.
#[derive(Clone, Debug)]
pub struct HTransform {
    rho: PeanoFunction,
    c: f64,
    nodes: Vec<f64>,
    values: Vec<f64>,
    closed_form: bool,
}

impl HTransform {
    pub fn new(rho: &PeanoFunction, c: f64) -> Result<Self, PeanoError> {
        rho.check_h_domain(c)?;
        let closed_form = (c == 0.0 && rho.as_power().is_some())
            || (c > 0.0 && matches!(rho.kind, Kind::Linear { .. }));
        let mut nodes = Vec::new();
        let mut values = Vec::new();
        if !closed_form {
            let mut u = 1e-12;
            while u < 1e8 {
                nodes.push(u);
                u *= 1.1;
            }
            nodes.extend(rho.breakpoints().into_iter().filter(|&b| b > 1e-12 && b < 1e8));
            nodes.sort_by(|a, b| a.total_cmp(b));
            nodes.dedup();
            let f = |x: f64| 1.0 / (c + rho.eval(x));
            let mut acc = rho.head_integral(c, nodes[0]);
            values.push(acc);
            for w in nodes.windows(2) {
                acc += quad::adaptive(&f, w[0], w[1], 1e-14);
                values.push(acc);
            }
        }
        Ok(HTransform { rho: rho.clone(), c, nodes, values, closed_form })
    }

    pub fn rho(&self) -> &PeanoFunction {
        &self.rho
    }

    /// [`PeanoFunction::growth_bound_check`] on the tabulated transform.
    pub fn growth_bound_check(&self, k1: f64, k2: f64, k3: f64) -> Result<GrowthBoundReport, PeanoError> {
        if !(k2 > 0.0 && k3 > 0.0) {
            return Err(PeanoError::Precondition("k2 and k3 must be positive".into()));
        }
        let h1 = self.eval(1.0);
        if k1 < h1 * (1.0 - 1e-12) {
            return Err(PeanoError::Precondition(format!("k1 = {k1} is below H_c(1) = {h1}")));
        }
        Ok(self.rho.growth_report(self.c, k2, k3, self.inverse(k1 + k2), self.inverse(k1)))
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn eval(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        if self.closed_form {
            return self.rho.h_unchecked(self.c, u);
        }
        if u < self.nodes[0] {
            return self.rho.head_integral(self.c, u);
        }
        let f = |x: f64| 1.0 / (self.c + self.rho.eval(x));
        let j = self.nodes.partition_point(|&n| n <= u) - 1;
        if j + 1 == self.nodes.len() {
            self.values[j] + quad::adaptive(&f, self.nodes[j], u, 1e-14)
        } else {
            self.values[j] + quad::panel(self.nodes[j], u, &f)
        }
    }

    pub fn inverse(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        if self.closed_form {
            return self.rho.inverse_h(self.c, v).unwrap_or(f64::NAN);
        }
        let (mut lo, mut hi) = if v < self.values[0] {
            (0.0, self.nodes[0])
        } else if v >= *self.values.last().expect("table is nonempty") {
            let mut hi = *self.nodes.last().expect("table is nonempty") * 2.0;
            while self.eval(hi) < v {
                hi *= 2.0;
            }
            (hi / 2.0, hi)
        } else {
            let j = self.values.partition_point(|&x| x <= v) - 1;
            (self.nodes[j], self.nodes[j + 1])
        };
        // safeguarded Newton: H' = 1/(c + rho)
        let mut u = 0.5 * (lo + hi);
        for _ in 0..100 {
            let r = self.eval(u) - v;
            if r > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let step = r * (self.c + self.rho.eval(u));
            let mut next = u - step;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - u).abs() <= 1e-15 * u.abs() || hi - lo <= 1e-15 * hi {
                u = next;
                break;
            }
            u = next;
        }
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn family_values() {
        assert!(close(PeanoFunction::power(1.0, 0.5).unwrap().eval(4.0), 2.0, 1e-15));
        assert!(close(PeanoFunction::linear(2.0).unwrap().eval(3.0), 6.0, 1e-15));
        let r8 = PeanoFunction::make_family("rho8", &[]).unwrap();
        assert!(close(r8.eval(2.0), 1.25, 1e-15));
        assert!(close(r8.eval(1.0), 1.0, 1e-15));
        assert!(close(r8.eval(10.0), 1.25, 1e-15));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(PeanoFunction::power(1.0, 1.5).is_err());
        assert!(PeanoFunction::make_family("rho2", &[("beta", 0.5)]).is_err());
        assert!(PeanoFunction::make_family("rho42", &[]).is_err());
        assert!(PeanoFunction::make_family("rho6", &[("q", 1.0)]).is_err());
    }

    #[test]
    fn cutoff_outside_concave_region_is_rejected() {
        // x|ln x| is decreasing beyond 1/e
        let err = PeanoFunction::make_family("rho2", &[("beta", 1.0), ("eps", 0.5)]).unwrap_err();
        assert!(matches!(err, PeanoError::InvalidCutoff { .. }));
        let ok = PeanoFunction::make_family("rho2", &[("beta", 1.0)]).unwrap();
        assert_eq!(ok.cutoff(), Some((-2.0f64).exp()));
    }

    #[test]
    fn linear_continuation_is_c1() {
        let r = PeanoFunction::make_family("rho4", &[("alpha", 0.5)]).unwrap();
        let eps = r.cutoff().unwrap();
        let h = 1e-7;
        assert!(close(r.eval(eps + h), r.eval(eps) + h * r.deriv(eps), 1e-12));
        assert!(close(r.deriv(eps * (1.0 - 1e-9)), r.deriv(eps * (1.0 + 1e-9)), 1e-6));
    }

    #[test]
    fn slope_at_zero_is_infinite_for_peano_families() {
        assert_eq!(PeanoFunction::sqrt().deriv(0.0), f64::INFINITY);
        assert_eq!(PeanoFunction::linear(3.0).unwrap().deriv(0.0), 3.0);
    }

    #[test]
    fn conjugate_examples() {
        let s = PeanoFunction::sqrt();
        assert!(close(s.conjugate(1.0), 0.25, 1e-12));
        assert!(close(s.conjugate(0.5), 0.5, 1e-12));
        assert_eq!(PeanoFunction::linear(2.0).unwrap().conjugate(1.0), f64::INFINITY);
        assert_eq!(PeanoFunction::linear(2.0).unwrap().conjugate(2.0), 0.0);
    }

    #[test]
    fn numeric_conjugate_matches_closed_form() {
        // the same function through the custom (numeric) route
        let c = PeanoFunction::custom("sqrt", |x| x.sqrt(), |x| if x > 0.0 { 0.5 / x.sqrt() } else { f64::INFINITY });
        for q in [0.05, 0.3, 1.0, 7.0] {
            assert!(close(c.conjugate(q), 1.0 / (4.0 * q), 1e-10), "q = {q}");
        }
        let r8 = PeanoFunction::make_family("rho8", &[]).unwrap();
        assert!(close(r8.conjugate(0.0), 1.25, 1e-12));
    }

    #[test]
    fn infimum_over_grid() {
        let s = PeanoFunction::sqrt();
        assert!(close(s.inf_representation(4.0, &[0.1, 0.25, 0.7]).unwrap(), 2.0, 1e-12));
        assert!(close(s.inf_representation(1.0, &[0.5]).unwrap(), 1.0, 1e-12));
        assert!(close(s.inf_representation(4.0, &[1.0]).unwrap(), 4.25, 1e-12));
        assert_eq!(s.inf_representation(1.0, &[]), Err(PeanoError::EmptyGrid));
        assert_eq!(s.inf_representation(1.0, &[0.0]), Err(PeanoError::AllInfinite));
    }

    #[test]
    fn tangent_controls() {
        let s = PeanoFunction::sqrt();
        assert!(close(s.tangent_control(1.0).unwrap(), 0.5, 1e-15));
        assert!(close(s.tangent_control(4.0).unwrap(), 0.25, 1e-15));
        assert_eq!(PeanoFunction::linear(3.0).unwrap().tangent_control(2.0).unwrap(), 3.0);
        assert!(matches!(s.tangent_control(0.0), Err(PeanoError::NonPositivePoint(_))));
    }

    #[test]
    fn h_transform_examples() {
        let s = PeanoFunction::sqrt();
        assert!(close(s.integral_h(0.0, 1.0).unwrap(), 2.0, 1e-14));
        assert!(close(s.integral_h(0.0, 4.0).unwrap(), 4.0, 1e-14));
        let p = PeanoFunction::power(1.0, 2.0 / 3.0).unwrap();
        assert!(close(p.integral_h(0.0, 1.0).unwrap(), 3.0, 1e-13));
        assert!(close(s.inverse_h(0.0, 2.0).unwrap(), 1.0, 1e-14));
        assert!(close(s.inverse_h(0.0, 3.0).unwrap(), 2.25, 1e-14));
        let h5 = s.integral_h(1.0, 5.0).unwrap();
        assert!(close(s.inverse_h(1.0, h5).unwrap(), 5.0, 1e-9));
        let osgood = PeanoFunction::make_family("rho2", &[("beta", 1.0)]).unwrap();
        assert_eq!(osgood.integral_h(0.0, 1.0), Err(PeanoError::DivergentIntegral));
    }

    #[test]
    fn numeric_h_matches_closed_form_through_the_singularity() {
        for alpha in [0.25, 0.5, 0.9] {
            let custom = PeanoFunction::custom("pow", move |x: f64| x.powf(alpha), move |x: f64| alpha * x.powf(alpha - 1.0));
            let exact = 1.0 / (1.0 - alpha);
            let got = custom.integral_h(0.0, 1.0).unwrap();
            assert!(close(got, exact, 1e-9), "alpha {alpha}: {got} vs {exact}");
        }
    }

    #[test]
    fn tabulated_transform_matches_direct_route() {
        let r = PeanoFunction::make_family("rho7", &[("k", 1.0), ("alpha", 0.5), ("c", 1.0)]).unwrap();
        let t = HTransform::new(&r, 0.0).unwrap();
        for u in [1e-9, 0.3, 1.0, 2.5, 40.0] {
            let direct = r.integral_h(0.0, u).unwrap();
            assert!(close(t.eval(u), direct, 1e-10), "u = {u}");
            assert!(close(t.inverse(direct), u, 1e-9), "u = {u}");
        }
    }

    #[test]
    fn growth_bound_example() {
        let rep = PeanoFunction::sqrt().growth_bound_check(0.0, 2.0, 1.0, 1.0).unwrap();
        assert!(close(rep.lhs_a, 2.25, 1e-12));
        assert!(close(rep.rhs_a, 2.0 * 1f64.exp(), 1e-12));
        assert!(rep.pass);
        assert!(matches!(
            PeanoFunction::sqrt().growth_bound_check(0.0, 1.0, 1.0, 1.0),
            Err(PeanoError::Precondition(_))
        ));
    }

    #[test]
    fn tabulated_growth_check_matches_direct_route() {
        for rho in [PeanoFunction::sqrt(), PeanoFunction::make_family("rho9", &[]).unwrap()] {
            let table = HTransform::new(&rho, 0.0).unwrap();
            let k1 = table.eval(1.0) + 0.7;
            let a = rho.growth_bound_check(0.0, k1, 0.4, 1.3).unwrap();
            let b = table.growth_bound_check(k1, 0.4, 1.3).unwrap();
            assert!(close(a.lhs_a, b.lhs_a, 1e-8) && close(a.rhs_b, b.rhs_b, 1e-8), "{a:?} {b:?}");
            assert_eq!(a.pass, b.pass);
        }
    }

    #[test]
    fn classification_examples() {
        assert_eq!(PeanoFunction::linear(1.0).unwrap().classify(), Ok(FunctionClass::Lipschitz));
        let r2 = PeanoFunction::make_family("rho2", &[("beta", 1.0), ("eps", (-2.0f64).exp())]).unwrap();
        assert_eq!(r2.classify(), Ok(FunctionClass::Osgood));
        assert_eq!(PeanoFunction::sqrt().classify(), Ok(FunctionClass::Peano));
        // steeper logarithm: the integral converges
        let r2b = PeanoFunction::make_family("rho2", &[("beta", 2.0), ("eps", (-3.0f64).exp())]).unwrap();
        assert_eq!(r2b.classify(), Ok(FunctionClass::Peano));
    }

    #[test]
    fn text_round_trip() {
        for fam in Family::BUILTIN {
            let f = PeanoFunction::make_family(fam.name(), &[]).unwrap();
            let text = f.to_text().unwrap();
            let back: PeanoFunction = text.parse().unwrap();
            assert_eq!(back.to_text().unwrap(), text);
            for x in [1e-6, 0.01, 0.5, 3.0] {
                assert_eq!(back.eval(x), f.eval(x));
            }
        }
        let f: PeanoFunction = "rho6, k=2; alpha=0.25".parse().unwrap();
        assert_eq!(f.to_text().unwrap(), "family=rho6 k=2 alpha=0.25");
        assert!(PeanoFunction::sum(&f, &f).to_text().is_err());
    }
}
