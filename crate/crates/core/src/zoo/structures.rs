use serde::{Deserialize, Serialize};

use super::{assert_feasible, Action, MarketStructure, Outcome};
use crate::error::{Error, Result};
use crate::instance::MarketInstance;
use crate::probkit::{bits, ValueModel};

/// The canonical market structures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StructureKind {
    /// Firm 1 alone posts a price.
    Monopoly,
    /// Every participating firm posts a price; consumers buy the best
    /// nonnegative surplus.
    PriceCompetition,
    /// Firms choose quantities; prices clear through the symmetric inverse
    /// demand.
    QuantityCompetition,
    /// Firm 1 prices first; the others enter and price as functions of it.
    EntryDeterrence,
    /// Price competition where firm `i` also owns a captive share `γ_i`.
    PromotionalSales { gamma: Vec<f64> },
    /// Lowest bids win and sell to every consumer valuing the good above the bid.
    ReverseAuction,
}

/// A canonical structure bound to an instance.
#[derive(Clone, Debug)]
pub struct Canonical {
    kind: StructureKind,
    instance: MarketInstance,
}

impl Canonical {
    pub fn new(kind: StructureKind, instance: &MarketInstance) -> Result<Self> {
        if let StructureKind::PromotionalSales { gamma } = &kind {
            if gamma.len() != instance.n() {
                return Err(Error::InvalidStructure(format!(
                    "{} captive shares for {} firms",
                    gamma.len(),
                    instance.n()
                )));
            }
            if gamma.iter().any(|g| !(0.0..=1.0).contains(g)) {
                return Err(Error::InvalidStructure("captive shares must lie in [0, 1]".into()));
            }
            let total: f64 = gamma.iter().sum();
            if total > 1.0 + 1e-12 {
                return Err(Error::InvalidStructure(format!("captive shares sum to {total} > 1")));
            }
        }
        Ok(Self { kind, instance: instance.clone() })
    }

    pub fn monopoly(inst: &MarketInstance) -> Self {
        Self { kind: StructureKind::Monopoly, instance: inst.clone() }
    }

    pub fn price_competition(inst: &MarketInstance) -> Self {
        Self { kind: StructureKind::PriceCompetition, instance: inst.clone() }
    }

    pub fn quantity_competition(inst: &MarketInstance) -> Self {
        Self { kind: StructureKind::QuantityCompetition, instance: inst.clone() }
    }

    pub fn entry_deterrence(inst: &MarketInstance) -> Self {
        Self { kind: StructureKind::EntryDeterrence, instance: inst.clone() }
    }

    pub fn promotional_sales(inst: &MarketInstance, gamma: Vec<f64>) -> Result<Self> {
        Self::new(StructureKind::PromotionalSales { gamma }, inst)
    }

    pub fn reverse_auction(inst: &MarketInstance) -> Self {
        Self { kind: StructureKind::ReverseAuction, instance: inst.clone() }
    }

    pub fn kind(&self) -> &StructureKind {
        &self.kind
    }

    /// Pointwise allocation `μ(v|s)` for one consumer.
    pub fn allocation(&self, v: &[f64], actions: &[Action]) -> Result<Vec<f64>> {
        let n = self.instance.n();
        self.check_len(actions)?;
        let mut mu = vec![0.0; n];
        match &self.kind {
            StructureKind::Monopoly => {
                if let Some(p) = level(&actions[0])? {
                    if v[0] >= p {
                        mu[0] = 1.0;
                    }
                }
            }
            StructureKind::PriceCompetition => {
                let (prices, mask) = priced(actions)?;
                best_surplus_split(v, &prices, mask, &mut mu, 1.0);
            }
            StructureKind::EntryDeterrence => {
                let (prices, mask) = self.deterrence_prices(actions)?;
                best_surplus_split(v, &prices, mask, &mut mu, 1.0);
            }
            StructureKind::PromotionalSales { gamma } => {
                let (prices, mask) = priced(actions)?;
                let shoppers = 1.0 - gamma.iter().sum::<f64>();
                best_surplus_split(v, &prices, mask, &mut mu, shoppers);
                for i in bits(mask) {
                    if v[i] >= prices[i] {
                        mu[i] += gamma[i];
                    } else {
                        mu[i] = 0.0;
                    }
                }
            }
            StructureKind::ReverseAuction => {
                let (bids, mask) = priced(actions)?;
                let low = bits(mask).map(|i| bids[i]).fold(f64::INFINITY, f64::min);
                let winners: Vec<usize> = bits(mask).filter(|&i| bids[i] == low).collect();
                for &i in &winners {
                    if bids[i] <= v[i] {
                        mu[i] = 1.0 / winners.len() as f64;
                    }
                }
            }
            StructureKind::QuantityCompetition => {
                let (quantities, mask) = priced(actions)?;
                let total: f64 = bits(mask).map(|i| quantities[i]).sum();
                if total > 0.0 {
                    let p = inverse_demand(self.instance.values(), &quantities, mask);
                    for i in bits(mask) {
                        if bits(mask).all(|j| v[j] >= p[i]) {
                            mu[i] = quantities[i] / total;
                        }
                    }
                }
            }
        }
        Ok(mu)
    }

    fn check_len(&self, actions: &[Action]) -> Result<()> {
        if actions.len() != self.instance.n() {
            return Err(Error::InvalidStructure(format!(
                "{} actions for {} firms",
                actions.len(),
                self.instance.n()
            )));
        }
        Ok(())
    }

    /// Posted prices and the entered firms under entry deterrence. An
    /// incumbent that opts out leaves followers facing the top of the value
    /// range.
    fn deterrence_prices(&self, actions: &[Action]) -> Result<(Vec<f64>, u32)> {
        let n = self.instance.n();
        let mut prices = vec![0.0; n];
        let mut mask = 0u32;
        let incumbent = match &actions[0] {
            Action::OptOut => self.instance.v_max(),
            Action::Level { level } => {
                prices[0] = *level;
                mask |= 1;
                *level
            }
            Action::Follow { .. } => {
                return Err(Error::InvalidStructure("the incumbent posts a price".into()))
            }
        };
        for (i, a) in actions.iter().enumerate().skip(1) {
            match a {
                Action::OptOut => {}
                Action::Level { level } => {
                    prices[i] = *level;
                    mask |= 1 << i;
                }
                Action::Follow { plan } => {
                    let (enter, price) = plan.respond(incumbent);
                    if enter {
                        prices[i] = price;
                        mask |= 1 << i;
                    }
                }
            }
        }
        Ok((prices, mask))
    }
}

fn level(a: &Action) -> Result<Option<f64>> {
    match a {
        Action::OptOut => Ok(None),
        Action::Level { level } => {
            if !(level.is_finite() && *level >= 0.0) {
                return Err(Error::InvalidStructure(format!("level {level} is not a nonnegative number")));
            }
            Ok(Some(*level))
        }
        Action::Follow { .. } => {
            Err(Error::InvalidStructure("follow plans only exist under entry deterrence".into()))
        }
    }
}

/// Levels of the participating firms and their mask.
fn priced(actions: &[Action]) -> Result<(Vec<f64>, u32)> {
    let mut levels = vec![0.0; actions.len()];
    let mut mask = 0;
    for (i, a) in actions.iter().enumerate() {
        if let Some(l) = level(a)? {
            levels[i] = l;
            mask |= 1 << i;
        }
    }
    Ok((levels, mask))
}

fn best_surplus_split(v: &[f64], prices: &[f64], mask: u32, mu: &mut [f64], mass: f64) {
    let top = bits(mask).map(|i| v[i] - prices[i]).fold(f64::NEG_INFINITY, f64::max);
    if top < 0.0 {
        return;
    }
    let winners: Vec<usize> = bits(mask).filter(|&i| v[i] - prices[i] == top).collect();
    for &i in &winners {
        mu[i] += mass / winners.len() as f64;
    }
}

/// Symmetric inverse demand: the common price `p` at which the mass of
/// consumers valuing every participating good above `p` equals `Σ s_j`.
/// Zero prices when `Σ s_j > 1`, the top of the value range when nothing is
/// offered.
pub fn inverse_demand(values: &ValueModel, s: &[f64], mask: u32) -> Vec<f64> {
    let total: f64 = bits(mask).map(|i| s[i]).sum();
    let n = s.len();
    if total > 1.0 {
        return vec![0.0; n];
    }
    if total <= 0.0 {
        return vec![values.v_max(); n];
    }
    let (mut lo, mut hi) = (0.0, values.v_max());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if values.joint_survival(mid, mask) >= total {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 {
            break;
        }
    }
    vec![0.5 * (lo + hi); n]
}

impl MarketStructure for Canonical {
    fn name(&self) -> String {
        match &self.kind {
            StructureKind::Monopoly => "monopoly",
            StructureKind::PriceCompetition => "price competition",
            StructureKind::QuantityCompetition => "quantity competition",
            StructureKind::EntryDeterrence => "entry deterrence",
            StructureKind::PromotionalSales { .. } => "promotional sales",
            StructureKind::ReverseAuction => "reverse auction",
        }
        .to_string()
    }

    fn instance(&self) -> &MarketInstance {
        &self.instance
    }

    fn outcome(&self, actions: &[Action]) -> Result<Outcome> {
        self.check_len(actions)?;
        let values = self.instance.values();
        let n = self.instance.n();
        let mut out = Outcome::zero(n);
        match &self.kind {
            StructureKind::Monopoly => {
                for a in &actions[1..] {
                    level(a)?;
                }
                if let Some(p) = level(&actions[0])? {
                    let m = values.marginal(0);
                    out.entry[0] = 1.0;
                    out.quantity[0] = m.survival(p);
                    out.value[0] = m.upper_mean(p);
                    out.revenue[0] = p * out.quantity[0];
                }
            }
            StructureKind::PriceCompetition | StructureKind::EntryDeterrence => {
                let (prices, mask) = if self.kind == StructureKind::EntryDeterrence {
                    self.deterrence_prices(actions)?
                } else {
                    priced(actions)?
                };
                let wins = values.win_stats(&prices, mask);
                for i in bits(mask) {
                    out.entry[i] = 1.0;
                    out.quantity[i] = wins[i].prob;
                    out.value[i] = wins[i].value;
                    out.revenue[i] = prices[i] * wins[i].prob;
                }
            }
            StructureKind::PromotionalSales { gamma } => {
                let (prices, mask) = priced(actions)?;
                let shoppers = 1.0 - gamma.iter().sum::<f64>();
                let wins = values.win_stats(&prices, mask);
                for i in bits(mask) {
                    let m = values.marginal(i);
                    out.entry[i] = 1.0;
                    out.quantity[i] = gamma[i] * m.survival(prices[i]) + shoppers * wins[i].prob;
                    out.value[i] = gamma[i] * m.upper_mean(prices[i]) + shoppers * wins[i].value;
                    out.revenue[i] = prices[i] * out.quantity[i];
                }
            }
            StructureKind::ReverseAuction => {
                let (bids, mask) = priced(actions)?;
                let low = bits(mask).map(|i| bids[i]).fold(f64::INFINITY, f64::min);
                let winners: Vec<usize> = bits(mask).filter(|&i| bids[i] == low).collect();
                for i in bits(mask) {
                    out.entry[i] = 1.0;
                }
                for &i in &winners {
                    let m = values.marginal(i);
                    let share = 1.0 / winners.len() as f64;
                    out.quantity[i] = share * m.survival(bids[i]);
                    out.value[i] = share * m.upper_mean(bids[i]);
                    out.revenue[i] = bids[i] * out.quantity[i];
                }
            }
            StructureKind::QuantityCompetition => {
                let (quantities, mask) = priced(actions)?;
                if let Some(i) = bits(mask).find(|&i| quantities[i] > 1.0) {
                    return Err(Error::InvalidStructure(format!(
                        "firm {} chose quantity {} > 1",
                        i + 1,
                        quantities[i]
                    )));
                }
                let total: f64 = bits(mask).map(|i| quantities[i]).sum();
                let p = inverse_demand(values, &quantities, mask);
                for i in bits(mask) {
                    out.entry[i] = 1.0;
                    if total > 0.0 {
                        let share = quantities[i] / total;
                        out.quantity[i] = share * values.joint_survival(p[i], mask);
                        out.value[i] = share * values.joint_survival_mean(i, p[i], mask);
                        out.revenue[i] = p[i] * out.quantity[i];
                    }
                }
            }
        }
        assert_feasible(&out);
        Ok(out)
    }
}
