//! Strictly positive multiplier functions `m(x)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Serializable description of a multiplier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MultiplierSpec {
    Constant { value: f64 },
    /// `base + slope * (x_k1 + x_k2 + ...)` over the listed coordinates.
    Affine { base: f64, slope: f64, coords: Vec<usize> },
    /// Piecewise-linear in coordinate `coord`, sampled at equispaced points
    /// of `[0, 1]`.
    Table { coord: usize, values: Vec<f64> },
}

type Custom = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Multiplier {
    Spec(MultiplierSpec),
    Custom { f: Custom, lower: f64, label: String },
}

impl fmt::Debug for Multiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Spec(s) => write!(f, "{s:?}"),
            Self::Custom { lower, label, .. } => write!(f, "Custom({label}, m0={lower})"),
        }
    }
}

impl Multiplier {
    pub fn constant(value: f64) -> Self {
        Self::Spec(MultiplierSpec::Constant { value })
    }

    pub fn affine(base: f64, slope: f64, coords: Vec<usize>) -> Self {
        Self::Spec(MultiplierSpec::Affine { base, slope, coords })
    }

    /// A user-supplied function together with a claimed lower bound; the
    /// bound is still checked at every node where the multiplier is used.
    pub fn custom(label: &str, lower: f64, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom {
            f: Arc::new(f),
            lower,
            label: label.to_string(),
        }
    }

    pub fn from_spec(spec: MultiplierSpec) -> Result<Self> {
        let m = Self::Spec(spec);
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Spec(MultiplierSpec::Constant { value }) if !(*value > 0.0) => {
                Err(invalid("multiplier", format!("constant {value} is not positive")))
            }
            Self::Spec(MultiplierSpec::Table { values, .. }) if values.len() < 2 => {
                Err(invalid("multiplier", "table needs at least two values"))
            }
            Self::Spec(MultiplierSpec::Table { values, .. }) if values.iter().any(|v| !(*v > 0.0)) => {
                Err(invalid("multiplier", "table values must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Spec(MultiplierSpec::Constant { value }) => *value,
            Self::Spec(MultiplierSpec::Affine { base, slope, coords }) => {
                base + slope * coords.iter().map(|&k| x.get(k).copied().unwrap_or(0.0)).sum::<f64>()
            }
            Self::Spec(MultiplierSpec::Table { coord, values }) => {
                let y = x.get(*coord).copied().unwrap_or(0.0).clamp(0.0, 1.0);
                let cells = values.len() - 1;
                let pos = y * cells as f64;
                let i = (pos.floor() as usize).min(cells - 1);
                let w = pos - i as f64;
                values[i] * (1.0 - w) + values[i + 1] * w
            }
            Self::Custom { f, .. } => f(x),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Self::Spec(MultiplierSpec::Constant { .. }) => true,
            Self::Spec(MultiplierSpec::Affine { slope, coords, .. }) => *slope == 0.0 || coords.is_empty(),
            _ => false,
        }
    }

    /// Samples at the given points and checks positivity; returns the values
    /// and their minimum.
    pub fn sample_checked<'a>(&self, points: impl Iterator<Item = &'a [f64]>) -> Result<(Vec<f64>, f64)> {
        let vals: Vec<f64> = points.map(|p| self.eval(p)).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        if !(lo > 0.0) {
            return Err(invalid("multiplier", format!("non-positive value {lo} at a node")));
        }
        if let Self::Custom { lower, .. } = self {
            if lo < *lower {
                return Err(invalid("multiplier", format!("value {lo} below declared bound {lower}")));
            }
        }
        Ok((vals, lo))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation() {
        assert_eq!(Multiplier::constant(2.0).eval(&[0.3]), 2.0);
        assert_eq!(Multiplier::affine(1.0, 0.5, vec![0, 1]).eval(&[0.2, 0.4]), 1.3);
        let t = Multiplier::from_spec(MultiplierSpec::Table {
            coord: 0,
            values: vec![1.0, 3.0],
        })
        .unwrap();
        assert_eq!(t.eval(&[0.25]), 1.5);
    }

    #[test]
    fn positivity_checked() {
        let m = Multiplier::affine(1.0, -2.0, vec![0]);
        let pts = [vec![0.0], vec![1.0]];
        assert!(m.sample_checked(pts.iter().map(|p| p.as_slice())).is_err());
        assert!(Multiplier::from_spec(MultiplierSpec::Constant { value: 0.0 }).is_err());
    }

    #[test]
    fn spec_json() {
        let s: MultiplierSpec = serde_json::from_str(r#"{"kind":"affine","base":1,"slope":0.5,"coords":[1]}"#).unwrap();
        assert_eq!(
            s,
            MultiplierSpec::Affine {
                base: 1.0,
                slope: 0.5,
                coords: vec![1]
            }
        );
    }
}
