//! One-dimensional atomless distributions on a bounded interval.
//!
//! The same type serves as a firm's cost-type distribution `G_i` and as a
//! marginal of the consumer value model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A continuous, strictly increasing CDF on `[lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistSpec", into = "DistSpec")]
pub struct TypeDistribution {
    family: Family,
}

#[derive(Clone, Debug, PartialEq)]
enum Family {
    Uniform { lower: f64, upper: f64 },
    /// `G(θ) = ((θ - lower) / (upper - lower))^exponent`.
    Power { lower: f64, upper: f64, exponent: f64 },
    /// Piecewise-linear CDF through `(θ_k, G_k)`.
    Tabulated { theta: Vec<f64>, cdf: Vec<f64> },
}

/// Wire form of a [`TypeDistribution`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistSpec {
    Uniform { lower: f64, upper: f64 },
    Power { lower: f64, upper: f64, exponent: f64 },
    Tabulated { points: Vec<[f64; 2]> },
}

impl TryFrom<DistSpec> for TypeDistribution {
    type Error = Error;

    fn try_from(spec: DistSpec) -> Result<Self> {
        match spec {
            DistSpec::Uniform { lower, upper } => Self::uniform(lower, upper),
            DistSpec::Power { lower, upper, exponent } => Self::power(lower, upper, exponent),
            DistSpec::Tabulated { points } => Self::tabulated(points.iter().map(|p| (p[0], p[1]))),
        }
    }
}

impl From<TypeDistribution> for DistSpec {
    fn from(d: TypeDistribution) -> Self {
        match d.family {
            Family::Uniform { lower, upper } => DistSpec::Uniform { lower, upper },
            Family::Power { lower, upper, exponent } => DistSpec::Power { lower, upper, exponent },
            Family::Tabulated { theta, cdf } => DistSpec::Tabulated {
                points: theta.into_iter().zip(cdf).map(|(t, g)| [t, g]).collect(),
            },
        }
    }
}

fn check_support(lower: f64, upper: f64) -> Result<()> {
    if !(lower.is_finite() && upper.is_finite()) {
        return Err(Error::InvalidDistribution("support must be finite".into()));
    }
    if lower < 0.0 {
        return Err(Error::InvalidDistribution(format!("lower bound {lower} is negative")));
    }
    if lower >= upper {
        return Err(Error::InvalidDistribution(format!(
            "support [{lower}, {upper}] is empty or a point mass"
        )));
    }
    Ok(())
}

impl TypeDistribution {
    pub fn uniform(lower: f64, upper: f64) -> Result<Self> {
        check_support(lower, upper)?;
        Ok(Self { family: Family::Uniform { lower, upper } })
    }

    pub fn power(lower: f64, upper: f64, exponent: f64) -> Result<Self> {
        check_support(lower, upper)?;
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "power exponent must be positive, got {exponent}"
            )));
        }
        Ok(Self { family: Family::Power { lower, upper, exponent } })
    }

    /// Linear interpolation through the given `(θ, G(θ))` points. The first
    /// point must carry probability 0 and the last probability 1; both
    /// coordinates must be strictly increasing.
    pub fn tabulated(points: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let (theta, cdf): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        if theta.len() < 2 {
            return Err(Error::InvalidDistribution("need at least two points".into()));
        }
        check_support(theta[0], theta[theta.len() - 1])?;
        if cdf[0] != 0.0 || cdf[cdf.len() - 1] != 1.0 {
            return Err(Error::InvalidDistribution(
                "tabulated CDF must start at 0 and end at 1".into(),
            ));
        }
        for k in 1..theta.len() {
            if !(theta[k] > theta[k - 1] && cdf[k] > cdf[k - 1]) {
                return Err(Error::InvalidDistribution(format!(
                    "tabulated CDF is not strictly increasing at point {k}"
                )));
            }
        }
        Ok(Self { family: Family::Tabulated { theta, cdf } })
    }

    pub fn lower(&self) -> f64 {
        match &self.family {
            Family::Uniform { lower, .. } | Family::Power { lower, .. } => *lower,
            Family::Tabulated { theta, .. } => theta[0],
        }
    }

    pub fn upper(&self) -> f64 {
        match &self.family {
            Family::Uniform { upper, .. } | Family::Power { upper, .. } => *upper,
            Family::Tabulated { theta, .. } => theta[theta.len() - 1],
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = (self.lower(), self.upper());
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        match &self.family {
            Family::Uniform { .. } => (x - lo) / (hi - lo),
            Family::Power { exponent, .. } => ((x - lo) / (hi - lo)).powf(*exponent),
            Family::Tabulated { theta, cdf } => {
                let k = theta.partition_point(|&t| t <= x) - 1;
                let w = (x - theta[k]) / (theta[k + 1] - theta[k]);
                (cdf[k] + (cdf[k + 1] - cdf[k]) * w).min(cdf[k + 1])
            }
        }
    }

    pub fn survival(&self, x: f64) -> f64 {
        1.0 - self.cdf(x)
    }

    pub fn density(&self, x: f64) -> f64 {
        let (lo, hi) = (self.lower(), self.upper());
        if x < lo || x > hi {
            return 0.0;
        }
        match &self.family {
            Family::Uniform { .. } => 1.0 / (hi - lo),
            Family::Power { exponent, .. } => {
                let u = (x - lo) / (hi - lo);
                exponent * u.powf(exponent - 1.0) / (hi - lo)
            }
            Family::Tabulated { theta, cdf } => {
                let k = (theta.partition_point(|&t| t <= x) - 1).min(theta.len() - 2);
                (cdf[k + 1] - cdf[k]) / (theta[k + 1] - theta[k])
            }
        }
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let (lo, hi) = (self.lower(), self.upper());
        if q <= 0.0 {
            return lo;
        }
        if q >= 1.0 {
            return hi;
        }
        match &self.family {
            Family::Uniform { .. } => lo + (hi - lo) * q,
            Family::Power { exponent, .. } => lo + (hi - lo) * q.powf(1.0 / exponent),
            Family::Tabulated { theta, cdf } => {
                let k = cdf.partition_point(|&g| g <= q) - 1;
                let w = (q - cdf[k]) / (cdf[k + 1] - cdf[k]);
                (theta[k] + (theta[k + 1] - theta[k]) * w).min(theta[k + 1])
            }
        }
    }

    /// `∫_a^b x dG(x)`, exact for every family.
    pub fn partial_mean(&self, a: f64, b: f64) -> f64 {
        let (lo, hi) = (self.lower(), self.upper());
        let a = a.max(lo);
        let b = b.min(hi);
        if b <= a {
            return 0.0;
        }
        match &self.family {
            Family::Uniform { .. } => (b * b - a * a) / (2.0 * (hi - lo)),
            Family::Power { exponent, .. } => {
                let c = *exponent;
                let prim = |x: f64| {
                    let u = (x - lo) / (hi - lo);
                    lo * u.powf(c) + (hi - lo) * c / (c + 1.0) * u.powf(c + 1.0)
                };
                prim(b) - prim(a)
            }
            Family::Tabulated { theta, cdf } => {
                let mut total = 0.0;
                for k in 0..theta.len() - 1 {
                    let l = theta[k].max(a);
                    let r = theta[k + 1].min(b);
                    if r > l {
                        let d = (cdf[k + 1] - cdf[k]) / (theta[k + 1] - theta[k]);
                        total += d * (r * r - l * l) / 2.0;
                    }
                }
                total
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.partial_mean(self.lower(), self.upper())
    }

    /// `n` points `quantile(k / (n-1))`, with both support endpoints exact.
    pub fn quantile_grid(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![self.lower()],
            _ => {
                let mut grid: Vec<f64> =
                    (0..n).map(|k| self.quantile(k as f64 / (n - 1) as f64)).collect();
                grid[0] = self.lower();
                grid[n - 1] = self.upper();
                grid
            }
        }
    }

    /// Midpoint quadrature nodes in probability space: `quantile((k + ½)/n)`,
    /// each carrying weight `1/n`.
    pub fn midpoint_nodes(&self, n: usize) -> Vec<f64> {
        (0..n).map(|k| self.quantile((k as f64 + 0.5) / n as f64)).collect()
    }

    /// Breakpoints where the density may be discontinuous, inside the support.
    pub fn kinks(&self) -> Vec<f64> {
        match &self.family {
            Family::Tabulated { theta, .. } => theta[1..theta.len() - 1].to_vec(),
            _ => Vec::new(),
        }
    }
}
