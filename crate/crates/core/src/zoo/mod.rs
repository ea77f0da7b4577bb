//! Market structures as strategic-form games, the canonical examples, and
//! welfare evaluation of pure strategy profiles.

mod evaluate;
mod structures;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::MarketInstance;
use crate::ironing::VirtualCost;

pub use evaluate::{
    deviation_gap, evaluate, monopoly_price_table, price_grid, EvalSettings, ProfitCurve,
    WelfareReport,
};
pub use structures::{inverse_demand, Canonical, StructureKind};

/// One firm's pure action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    /// The mandatory opt-out `s_0`: no entry, no sales, no revenue.
    OptOut,
    /// A price, bid or quantity, depending on the structure.
    Level { level: f64 },
    /// An entry decision and price as functions of the incumbent's price.
    Follow { plan: FollowPlan },
}

impl Action {
    pub fn level(level: f64) -> Self {
        Action::Level { level }
    }

    pub fn is_opt_out(&self) -> bool {
        matches!(self, Action::OptOut)
    }
}

/// Entry decision `e_i(s_1)` and price `p_i(s_1)` tabulated on an increasing
/// grid of incumbent prices, read as a step function from the left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FollowPlan {
    pub grid: Vec<f64>,
    pub enter: Vec<bool>,
    pub price: Vec<f64>,
}

impl FollowPlan {
    /// A plan on `points` incumbent prices over `[0, top]`.
    pub fn tabulate(points: usize, top: f64, f: impl Fn(f64) -> Option<f64>) -> Self {
        let points = points.max(2);
        let grid: Vec<f64> = (0..points).map(|k| top * k as f64 / (points - 1) as f64).collect();
        let decisions: Vec<Option<f64>> = grid.iter().map(|&s| f(s)).collect();
        Self {
            enter: decisions.iter().map(Option::is_some).collect(),
            price: decisions.iter().map(|d| d.unwrap_or(0.0)).collect(),
            grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.len();
        if n == 0 || self.enter.len() != n || self.price.len() != n {
            return Err(Error::InvalidStructure("follow plan needs equal, nonempty columns".into()));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidStructure("follow plan grid must increase".into()));
        }
        Ok(())
    }

    /// `(e_i(s_1), p_i(s_1))`.
    pub fn respond(&self, incumbent: f64) -> (bool, f64) {
        let k = self.grid.partition_point(|&g| g <= incumbent).max(1) - 1;
        (self.enter[k], self.price[k])
    }
}

/// Interim-free outcome of an action profile, already integrated over
/// consumer values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    /// `r_i`.
    pub entry: Vec<f64>,
    /// `∫ μ_i dF`.
    pub quantity: Vec<f64>,
    /// `∫ v_i μ_i dF`.
    pub value: Vec<f64>,
    /// `t_i`.
    pub revenue: Vec<f64>,
}

impl Outcome {
    pub fn zero(n: usize) -> Self {
        Self {
            entry: vec![0.0; n],
            quantity: vec![0.0; n],
            value: vec![0.0; n],
            revenue: vec![0.0; n],
        }
    }

    /// `Σ_i ∫ v_i μ_i dF - Σ_i t_i`.
    pub fn consumer_surplus(&self) -> f64 {
        self.value.iter().sum::<f64>() - self.revenue.iter().sum::<f64>()
    }

    /// Ex-post profit `t_i - r_i θ (q_i + κ)`.
    pub fn profit(&self, i: usize, theta: f64, kappa: f64) -> f64 {
        self.revenue[i] - self.entry[i] * theta * (self.quantity[i] + kappa)
    }

    /// Total consumer mass served.
    pub fn served(&self) -> f64 {
        self.quantity.iter().sum()
    }
}

/// A market structure `(S_i, r_i, μ_i, t_i)` evaluated at pure action profiles.
pub trait MarketStructure: Sync {
    fn name(&self) -> String;

    fn instance(&self) -> &MarketInstance;

    /// Entry, service, delivered value and revenue at `actions`.
    fn outcome(&self, actions: &[Action]) -> Result<Outcome>;

    /// Virtual costs used by [`Strategy::VirtualCost`], when the structure
    /// already carries them.
    fn virtual_costs(&self) -> Option<&[VirtualCost]> {
        None
    }
}

/// Slack for the served mass. Win probabilities come from a midpoint rule
/// on the value line, which overshoots by up to about `1e-5` for marginals
/// with an unbounded density at the bottom of their support.
const FEASIBILITY_SLACK: f64 = 1e-4;

/// Checks the allocation feasibility bound `Σ_i ∫ μ_i dF ≤ 1`, up to the
/// error of the value quadrature.
pub(crate) fn assert_feasible(outcome: &Outcome) {
    let served = outcome.served();
    assert!(served <= 1.0 + FEASIBILITY_SLACK, "allocation serves {served} > 1 consumers");
}

/// A pure strategy `θ_i ↦ action`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    OptOut,
    Constant { level: f64 },
    /// Level equal to the firm's own type.
    Truthful,
    /// `a + b θ`.
    Scaled { a: f64, b: f64 },
    /// Level equal to the firm's ironed virtual cost.
    VirtualCost,
    /// Step table: type `θ` plays the action of the last grid point `≤ θ`;
    /// a missing level means opt-out.
    Table { theta: Vec<f64>, levels: Vec<Option<f64>> },
    /// The same follow plan at every type.
    Follow { plan: FollowPlan },
}

impl Strategy {
    pub fn action(&self, theta: f64, phi: Option<&VirtualCost>) -> Result<Action> {
        Ok(match self {
            Strategy::OptOut => Action::OptOut,
            Strategy::Constant { level } => Action::level(*level),
            Strategy::Truthful => Action::level(theta),
            Strategy::Scaled { a, b } => Action::level(a + b * theta),
            Strategy::VirtualCost => {
                let vc = phi.ok_or_else(|| {
                    Error::Precondition("virtual-cost strategy needs ironed virtual costs".into())
                })?;
                Action::level(vc.eval(theta))
            }
            Strategy::Table { theta: grid, levels } => {
                let k = grid.partition_point(|&g| g <= theta).max(1) - 1;
                match levels[k] {
                    Some(level) => Action::level(level),
                    None => Action::OptOut,
                }
            }
            Strategy::Follow { plan } => Action::Follow { plan: plan.clone() },
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Strategy::Table { theta, levels } => {
                if theta.is_empty() || theta.len() != levels.len() {
                    return Err(Error::InvalidStructure("strategy table columns differ".into()));
                }
                if theta.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidStructure("strategy table grid must increase".into()));
                }
                Ok(())
            }
            Strategy::Follow { plan } => plan.validate(),
            _ => Ok(()),
        }
    }

    pub fn needs_virtual_cost(&self) -> bool {
        matches!(self, Strategy::VirtualCost)
    }
}
