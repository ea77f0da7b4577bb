//! JSON instance configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Firm, MarketInstance};
use crate::mechanism::MechanismSettings;
use crate::probkit::{Integrator, Method, ValueModel};
use crate::zoo::{EvalSettings, Strategy, StructureKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    /// Own-type grid points per firm.
    pub types: usize,
    /// Region map resolution per axis.
    pub prices: usize,
    /// Deviation prices for best-response checks.
    pub deviations: usize,
    /// Types checked for incentive compatibility.
    pub check_types: usize,
    /// Nodes of the value-line quadrature; the value model default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line_nodes: Option<usize>,
}

impl Default for Grids {
    fn default() -> Self {
        Self { types: 256, prices: 512, deviations: 128, check_types: 64, line_nodes: None }
    }
}

/// A structure and the strategy profile to evaluate it under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub structure: StructureKind,
    pub profile: Vec<Strategy>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub firms: Vec<Firm>,
    pub values: ValueModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integration: Option<Integrator>,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare: Vec<Comparison>,
}

fn config_error(path: impl Into<String>, message: impl ToString) -> Error {
    Error::Config { path: path.into(), message: message.to_string() }
}

impl InstanceConfig {
    /// Parses a configuration, reporting the JSON path of the first bad field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_error(if path == "." { "<root>".to_string() } else { path }, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.firms.is_empty() {
            return Err(config_error("firms", "at least one firm is required"));
        }
        for (i, f) in self.firms.iter().enumerate() {
            if !(f.kappa >= 0.0 && f.kappa.is_finite()) {
                return Err(config_error(
                    format!("firms[{i}].kappa"),
                    format!("must be finite and nonnegative, got {}", f.kappa),
                ));
            }
            f.weight.validate(&f.dist).map_err(|e| config_error(format!("firms[{i}].weight"), e))?;
        }
        if self.values.dimension() != self.firms.len() {
            return Err(config_error(
                "values",
                format!(
                    "dimension {} does not match {} firms",
                    self.values.dimension(),
                    self.firms.len()
                ),
            ));
        }
        for (k, c) in self.compare.iter().enumerate() {
            if c.profile.len() != self.firms.len() {
                return Err(config_error(
                    format!("compare[{k}].profile"),
                    format!("{} strategies for {} firms", c.profile.len(), self.firms.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn instance(&self) -> Result<MarketInstance> {
        let values = match self.grids.line_nodes {
            Some(n) => self.values.clone().with_line_nodes(n),
            None => self.values.clone(),
        };
        MarketInstance::new(self.firms.clone(), values)
            .map_err(|e| config_error("<root>", e))
    }

    fn seed(&self, seed: Option<u64>) -> u64 {
        seed.or(match self.integration.map(|i| i.method) {
            Some(Method::MonteCarlo { seed, .. }) => Some(seed),
            _ => None,
        })
        .unwrap_or(0)
    }

    /// Mechanism settings: quadrature nodes or Monte Carlo draws from the
    /// integration block, grid sizes from `grids`, `seed` overriding both.
    pub fn mechanism_settings(&self, seed: Option<u64>) -> MechanismSettings {
        let mut s = MechanismSettings { types: self.grids.types, ..Default::default() };
        match self.integration.map(|i| i.method) {
            Some(Method::Quadrature { nodes }) => s.opponent_nodes = nodes,
            Some(Method::MonteCarlo { draws, .. }) => s.opponent_draws = draws,
            None => {}
        }
        s.seed = self.seed(seed);
        s
    }

    pub fn eval_settings(&self, seed: Option<u64>) -> EvalSettings {
        let mut s = EvalSettings::default();
        if let Some(Method::MonteCarlo { draws, .. }) = self.integration.map(|i| i.method) {
            s.draws = draws;
        }
        s.seed = self.seed(seed);
        s
    }
}
