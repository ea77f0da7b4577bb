//! Problem data shared by the mechanism, the cap structure and the zoo.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probkit::{bits, ParetoWeight, TypeDistribution, ValueModel};

/// Upper bound on the number of firms (subset enumeration is exhaustive).
pub const MAX_FIRMS: usize = 16;

/// One firm: cost-type law `G_i`, Pareto weight `Λ_i`, fixed-cost scale `κ_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Firm {
    pub dist: TypeDistribution,
    pub weight: ParetoWeight,
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarketInstance {
    firms: Vec<Firm>,
    values: ValueModel,
}

impl MarketInstance {
    pub fn new(firms: Vec<Firm>, values: ValueModel) -> Result<Self> {
        if firms.is_empty() || firms.len() > MAX_FIRMS {
            return Err(Error::InvalidInstance(format!(
                "{} firms; supported range is 1..={MAX_FIRMS}",
                firms.len()
            )));
        }
        if values.dimension() != firms.len() {
            return Err(Error::InvalidInstance(format!(
                "value model has dimension {} but there are {} firms",
                values.dimension(),
                firms.len()
            )));
        }
        for (i, f) in firms.iter().enumerate() {
            if !(f.kappa >= 0.0 && f.kappa.is_finite()) {
                return Err(Error::InvalidInstance(format!(
                    "firm {}: kappa must be finite and nonnegative, got {}",
                    i + 1,
                    f.kappa
                )));
            }
            f.weight
                .validate(&f.dist)
                .map_err(|e| Error::InvalidInstance(format!("firm {}: {e}", i + 1)))?;
        }
        Ok(Self { firms, values })
    }

    pub fn n(&self) -> usize {
        self.firms.len()
    }

    pub fn firm(&self, i: usize) -> &Firm {
        &self.firms[i]
    }

    pub fn firms(&self) -> &[Firm] {
        &self.firms
    }

    pub fn values(&self) -> &ValueModel {
        &self.values
    }

    pub fn kappas(&self) -> Vec<f64> {
        self.firms.iter().map(|f| f.kappa).collect()
    }

    pub fn v_max(&self) -> f64 {
        self.values.v_max()
    }

    /// Mask with every firm set.
    pub fn all(&self) -> u32 {
        EntrantSet::full(self.n()).0
    }

    /// Replaces the value model (same dimension required).
    pub fn with_values(self, values: ValueModel) -> Result<Self> {
        Self::new(self.firms, values)
    }
}

/// A set of firms as a bitmask: bit `i` stands for firm `i + 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntrantSet(pub u32);

impl EntrantSet {
    pub const EMPTY: Self = Self(0);

    pub fn full(n: usize) -> Self {
        Self(((1u64 << n) - 1) as u32)
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0 & (1 << i) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + Clone {
        bits(self.0)
    }

    pub fn with(&self, i: usize) -> Self {
        Self(self.0 | (1 << i))
    }

    pub fn without(&self, i: usize) -> Self {
        Self(self.0 & !(1 << i))
    }
}

impl fmt::Display for EntrantSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "∅");
        }
        let names: Vec<String> = self.members().map(|i| (i + 1).to_string()).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}
