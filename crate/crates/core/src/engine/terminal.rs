//! Terminal values `xi` as functions of the simulated paths.

use super::{BasisSpec, EngineError, EventFeature, PathEnsemble};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalSpec {
    Zero,
    Constant(f64),
    /// `m exp(sigma B^1_T - sigma^2 T / 2)`.
    Lognormal { m: f64, sigma: f64 },
    /// `1{B^1_at > threshold} + eps`, with `at` defaulting to the horizon.
    Indicator { threshold: f64, eps: f64, at: Option<f64> },
    /// `(B^1_T)^2`.
    BrownianSquare,
    Shifted(Box<TerminalSpec>, f64),
    Floored(Box<TerminalSpec>, f64),
}

impl TerminalSpec {
    pub fn validate(&self) -> Result<(), EngineError> {
        match self {
            TerminalSpec::Constant(v) if !(*v >= 0.0) => Err(EngineError::NegativeTerminal(*v)),
            TerminalSpec::Lognormal { m, sigma } if !(*m >= 0.0 && sigma.is_finite()) => {
                Err(EngineError::InvalidParameter(format!("lognormal m = {m}, sigma = {sigma}")))
            }
            TerminalSpec::Indicator { eps, .. } if !(*eps >= 0.0) => Err(EngineError::NegativeTerminal(*eps)),
            TerminalSpec::Shifted(inner, s) => {
                inner.validate()?;
                if *s < 0.0 {
                    Err(EngineError::NegativeTerminal(*s))
                } else {
                    Ok(())
                }
            }
            TerminalSpec::Floored(inner, f) => {
                inner.validate()?;
                if !(*f >= 0.0) {
                    Err(EngineError::NegativeTerminal(*f))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn value(&self, ens: &PathEnsemble, m: usize) -> f64 {
        let n = ens.grid().steps();
        let horizon = ens.grid().horizon();
        match self {
            TerminalSpec::Zero => 0.0,
            TerminalSpec::Constant(v) => *v,
            TerminalSpec::Lognormal { m: scale, sigma } => {
                let b = ens.position(n, m)[0];
                scale * (sigma * b - 0.5 * sigma * sigma * horizon).exp()
            }
            TerminalSpec::Indicator { threshold, eps, at } => {
                let i = at.map(|t| ens.grid().index_of(t)).unwrap_or(n);
                let hit = if ens.position(i, m)[0] > *threshold { 1.0 } else { 0.0 };
                hit + eps
            }
            TerminalSpec::BrownianSquare => ens.position(n, m)[0].powi(2),
            TerminalSpec::Shifted(inner, s) => inner.value(ens, m) + s,
            TerminalSpec::Floored(inner, f) => inner.value(ens, m).max(*f),
        }
    }

    /// One value per path.
    pub fn sample(&self, ens: &PathEnsemble) -> Result<Vec<f64>, EngineError> {
        self.validate()?;
        Ok((0..ens.paths()).map(|m| self.value(ens, m)).collect())
    }

    /// Extra regression feature needed when the value is fixed before the
    /// horizon.
    pub fn event_feature(&self) -> Option<EventFeature> {
        match self {
            TerminalSpec::Indicator { threshold, at: Some(t), .. } => Some(EventFeature { time: *t, threshold: *threshold }),
            TerminalSpec::Shifted(inner, _) | TerminalSpec::Floored(inner, _) => inner.event_feature(),
            _ => None,
        }
    }

    /// `base` with the features this terminal value needs.
    pub fn basis(&self, base: BasisSpec) -> BasisSpec {
        BasisSpec { event: self.event_feature(), exponential: self.lognormal_rate(), ..base }
    }

    fn lognormal_rate(&self) -> Option<f64> {
        match self {
            TerminalSpec::Lognormal { sigma, .. } => Some(*sigma),
            TerminalSpec::Shifted(inner, _) | TerminalSpec::Floored(inner, _) => inner.lognormal_rate(),
            _ => None,
        }
    }

    /// The constant value, if the terminal condition is deterministic.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            TerminalSpec::Zero => Some(0.0),
            TerminalSpec::Constant(v) => Some(*v),
            TerminalSpec::Shifted(inner, s) => inner.as_constant().map(|v| v + s),
            TerminalSpec::Floored(inner, f) => inner.as_constant().map(|v| v.max(*f)),
            _ => None,
        }
    }
}

impl fmt::Display for TerminalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TerminalSpec::Zero => write!(f, "zero"),
            TerminalSpec::Constant(v) => write!(f, "constant value={v}"),
            TerminalSpec::Lognormal { m, sigma } => write!(f, "lognormal m={m} sigma={sigma}"),
            TerminalSpec::Indicator { threshold, eps, at } => {
                write!(f, "indicator threshold={threshold} eps={eps}")?;
                if let Some(t) = at {
                    write!(f, " at={t}")?;
                }
                Ok(())
            }
            TerminalSpec::BrownianSquare => write!(f, "brownian_square"),
            TerminalSpec::Shifted(inner, s) => write!(f, "{inner} shift={s}"),
            TerminalSpec::Floored(inner, v) => write!(f, "{inner} floor={v}"),
        }
    }
}

impl FromStr for TerminalSpec {
    type Err = EngineError;

    /// `kind key=value ...`, e.g. `lognormal m=1 sigma=0.5 floor=0.5`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut toks = s.split_whitespace();
        let kind = toks.next().ok_or_else(|| EngineError::InvalidParameter("empty terminal spec".into()))?;
        let mut kv = std::collections::BTreeMap::new();
        for t in toks {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| EngineError::InvalidParameter(format!("expected key=value, got '{t}'")))?;
            let v: f64 = v.parse().map_err(|_| EngineError::InvalidParameter(format!("bad number '{v}'")))?;
            kv.insert(k.to_string(), v);
        }
        let mut take = |k: &str, default: Option<f64>| -> Result<f64, EngineError> {
            kv.remove(k)
                .or(default)
                .ok_or_else(|| EngineError::InvalidParameter(format!("terminal '{kind}' needs {k}")))
        };
        let base = match kind {
            "zero" => TerminalSpec::Zero,
            "constant" => TerminalSpec::Constant(take("value", None)?),
            "lognormal" => TerminalSpec::Lognormal { m: take("m", Some(1.0))?, sigma: take("sigma", None)? },
            "indicator" => {
                let threshold = take("threshold", Some(0.0))?;
                let eps = take("eps", Some(0.0))?;
                let at = kv.remove("at");
                TerminalSpec::Indicator { threshold, eps, at }
            }
            "brownian_square" => TerminalSpec::BrownianSquare,
            other => return Err(EngineError::InvalidParameter(format!("unknown terminal kind '{other}'"))),
        };
        let shift = kv.remove("shift");
        let floor = kv.remove("floor");
        if let Some(k) = kv.keys().next() {
            return Err(EngineError::InvalidParameter(format!("unknown terminal key '{k}'")));
        }
        let mut spec = base;
        if let Some(s) = shift {
            spec = TerminalSpec::Shifted(Box::new(spec), s);
        }
        if let Some(f) = floor {
            spec = TerminalSpec::Floored(Box::new(spec), f);
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::TimeGrid;
    use crate::exec::Execution;

    #[test]
    fn samplers() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let e = PathEnsemble::simulate(g, 4000, 1, 11, Execution::Sequential).unwrap();
        assert!(TerminalSpec::Constant(2.0).sample(&e).unwrap().iter().all(|&v| v == 2.0));
        assert!(TerminalSpec::Zero.sample(&e).unwrap().iter().all(|&v| v == 0.0));
        let ln = TerminalSpec::Lognormal { m: 1.0, sigma: 0.5 }.sample(&e).unwrap();
        let mean = ln.iter().sum::<f64>() / 4000.0;
        assert!((mean - 1.0).abs() < 0.05);
        let ind = TerminalSpec::Indicator { threshold: 0.0, eps: 0.0, at: None }.sample(&e).unwrap();
        assert!(ind.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn negative_constant_is_rejected() {
        let e = PathEnsemble::deterministic(TimeGrid::new(1.0, 2).unwrap(), 1);
        assert!(matches!(TerminalSpec::Constant(-1.0).sample(&e), Err(EngineError::NegativeTerminal(_))));
    }

    #[test]
    fn text_round_trip() {
        for s in ["zero", "constant value=1.5", "lognormal m=1 sigma=0.5 floor=0.5", "indicator threshold=0 eps=0 at=0.5"] {
            let spec: TerminalSpec = s.parse().unwrap();
            let again: TerminalSpec = spec.to_string().parse().unwrap();
            assert_eq!(spec, again, "{s}");
        }
        assert!("constant".parse::<TerminalSpec>().is_err());
        assert!("lognormal sigma=1 colour=3".parse::<TerminalSpec>().is_err());
    }
}
