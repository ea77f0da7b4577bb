//! Price competition with lump-sum transfers and yardstick price caps.
//!
//! Firms post prices. A firm is admitted when its price is at most its cap
//! `p̄_i(s_{-i})`, the largest own price at which the virtual-surplus
//! maximizing entrant set, computed with prices in place of virtual costs,
//! still contains it. Admitted firms compete on price; every participating
//! firm also pays the lump sum `τ*_i` evaluated at the type its price reveals.

pub mod checks;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::instance::{EntrantSet, MarketInstance};
use crate::ironing::VirtualCost;
use crate::mechanism::{
    select_among, select_entrants, trapezoid_weights, DirectMechanism, QuantityStats, TypeSample,
};
use crate::probkit::{bits, Estimate};
use crate::zoo::{
    self, assert_feasible, Action, EvalSettings, MarketStructure, Outcome, Strategy,
};

pub use checks::{
    cap_shape_check, single_firm_root, threshold_consistency, CapBounds, CapShapeReport,
    ThresholdReport,
};

/// Bisection width for caps.
pub const CAP_TOL: f64 = 1e-9;

/// `E^P(s)`: the entrant rule with prices in place of virtual costs.
pub fn entrant_set_from_prices(inst: &MarketInstance, s: &[f64]) -> EntrantSet {
    select_entrants(inst, s)
}

/// `p̄_i(s_{-i})`: the largest own price keeping firm `i` in `E^P`, found by
/// bisection on `[0, v_max]`. Zero when firm `i` is excluded even at price
/// zero, `+∞` when it is admitted at `v_max`. `s[i]` is ignored.
pub fn price_cap(inst: &MarketInstance, i: usize, s: &[f64]) -> f64 {
    let mut x = s.to_vec();
    let mut member = |p: f64| {
        x[i] = p;
        select_entrants(inst, &x).contains(i)
    };
    let top = inst.v_max();
    if !member(0.0) {
        return 0.0;
    }
    if member(top) {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (0.0, top);
    while hi - lo > CAP_TOL {
        let mid = 0.5 * (lo + hi);
        if member(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// How revenues are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevenueMode {
    /// `t_i = s_i ∫ μ_i dF - τ_i(s_i)` at the realized price vector.
    #[default]
    Realized,
    /// Realized sales replaced by their expectation against equilibrium
    /// opponents.
    Interim,
}

/// The price-cap structure built from an efficient direct mechanism.
#[derive(Clone, Debug)]
pub struct PryceCap {
    mech: DirectMechanism,
    caps: bool,
    lump_sums: bool,
    /// `τ_i(s)` above the virtual-cost range, keyed by `(i, s.to_bits())`.
    /// Computed with caps on whatever the switch says, so variants share it.
    above_range: Arc<Mutex<HashMap<(usize, u64), f64>>>,
}

impl PryceCap {
    pub fn new(mech: DirectMechanism) -> Self {
        Self { mech, caps: true, lump_sums: true, above_range: Default::default() }
    }

    /// Diagnostic variant with `τ ≡ 0`.
    pub fn without_lump_sums(mut self) -> Self {
        self.lump_sums = false;
        self
    }

    /// Same transfers, every participating firm admitted (`p̄ = ∞`).
    pub fn without_caps(mut self) -> Self {
        self.caps = false;
        self
    }

    pub fn has_caps(&self) -> bool {
        self.caps
    }

    pub fn mechanism(&self) -> &DirectMechanism {
        &self.mech
    }

    pub fn vc(&self, i: usize) -> &VirtualCost {
        &self.mech.virtual_costs()[i]
    }

    /// Admitted firms among `participants` at prices `s`.
    pub fn membership(&self, s: &[f64], participants: u32) -> EntrantSet {
        if self.caps {
            select_among(self.mech.instance(), s, participants).0
        } else {
            EntrantSet(participants)
        }
    }

    pub fn cap(&self, i: usize, s: &[f64]) -> f64 {
        if self.caps {
            price_cap(self.mech.instance(), i, s)
        } else {
            f64::INFINITY
        }
    }

    /// `σ_i(θ_i) = φ_i(θ_i)`.
    pub fn equilibrium_strategy(&self, i: usize, theta: f64) -> f64 {
        self.vc(i).eval(theta)
    }

    /// `τ*_i(θ_i)`.
    pub fn lump_sum(&self, i: usize, theta: f64) -> f64 {
        self.mech.lump_sum(i, theta)
    }

    /// `τ_i(s_i) = τ*_i(φ_i⁻¹(s_i))` on the range of `φ_i`.
    ///
    /// Above `φ_i(θ̄_i)` no type reveals itself and `φ_i⁻¹` is empty. There
    /// `τ_i(s) = s S(s) - T*(θ̄) - θ̄ (L(s) - L(φ_i(θ̄)))`, with `S` the
    /// interim sales and `L` the interim load `E[r(q + κ)]` against
    /// equilibrium opponents. Type `θ` then earns `Π(θ̄) + (θ̄ - θ) L(s)`
    /// at such a price, which IC bounds by its equilibrium profit, and the
    /// schedule is continuous at `φ_i(θ̄)`.
    pub fn tau(&self, i: usize, price: f64) -> f64 {
        if !self.lump_sums {
            return 0.0;
        }
        let vc = self.vc(i);
        if price > vc.eval(vc.upper()) {
            return self.tau_above_range(i, price);
        }
        self.lump_sum(i, vc.pseudo_inverse(price))
    }

    fn tau_above_range(&self, i: usize, price: f64) -> f64 {
        let key = (i, price.to_bits());
        if let Some(&tau) = self.above_range.lock().expect("cache lock").get(&key) {
            return tau;
        }
        let table = self.mech.table(i);
        let last = table.theta.len() - 1;
        let stats = self.capped_interim_stats(i, price, true);
        let tau = price * stats.sales
            - table.transfer[last]
            - table.theta[last] * (stats.quantity - table.quantity[last]);
        self.above_range.lock().expect("cache lock").insert(key, tau);
        tau
    }

    /// Expected entry and sales of firm `i` posting `price` against
    /// opponents who price at their virtual costs, over the mechanism's
    /// opponent sample.
    pub fn interim_stats(&self, i: usize, price: f64) -> QuantityStats {
        self.capped_interim_stats(i, price, self.caps)
    }

    fn capped_interim_stats(&self, i: usize, price: f64, caps: bool) -> QuantityStats {
        let inst = self.mech.instance();
        let kappa = inst.firm(i).kappa;
        let sample = self.mech.opponent_sample(i);
        let mut acc = QuantityStats::default();
        for theta in &sample.points {
            let mut s = self.mech.phi(theta);
            s[i] = price;
            let set = if caps { select_among(inst, &s, inst.all()).0 } else { EntrantSet(inst.all()) };
            if !set.contains(i) {
                continue;
            }
            let win = inst.values().win_stats(&s, set.0)[i];
            acc.quantity += win.prob + kappa;
            acc.sales += win.prob;
            acc.entry += 1.0;
            acc.value += win.value;
        }
        let m = sample.len().max(1) as f64;
        QuantityStats {
            quantity: acc.quantity / m,
            sales: acc.sales / m,
            entry: acc.entry / m,
            value: acc.value / m,
        }
    }

    /// `t^P_i` at the price vector `s` with every firm participating.
    pub fn revenue(&self, i: usize, s: &[f64], mode: RevenueMode) -> f64 {
        let sales = match mode {
            RevenueMode::Realized => {
                let inst = self.mech.instance();
                let set = self.membership(s, inst.all());
                if set.contains(i) {
                    inst.values().win_stats(s, set.0)[i].prob
                } else {
                    0.0
                }
            }
            RevenueMode::Interim => self.interim_stats(i, s[i]).sales,
        };
        s[i] * sales - self.tau(i, s[i])
    }

    /// Deviation prices: `count` points on `[0, 1.25·max(v_max, φ_i(θ̄))]`
    /// plus the virtual-cost range ends.
    pub fn deviation_prices(&self, i: usize, count: usize) -> Vec<f64> {
        let vc = self.vc(i);
        let top = 1.25 * self.mech.instance().v_max().max(vc.eval(vc.upper()));
        let mut grid = zoo::price_grid(0.0, top, count);
        grid.push(vc.eval(vc.lower()));
        grid.push(vc.eval(vc.upper()));
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid
    }

    /// Largest interim gain of firm `i` from deviating, over `types`, to
    /// any price in `deviations` or to opting out, when opponents play
    /// their virtual costs.
    pub fn best_response_gap(&self, i: usize, types: &[f64], deviations: &[f64]) -> Result<f64> {
        let n = self.mech.instance().n();
        let settings = EvalSettings {
            nodes: self.mech.settings().opponent_nodes,
            draws: self.mech.settings().opponent_draws,
            own_points: types.len(),
            iron_cells: self.mech.settings().iron_cells,
            seed: self.mech.settings().seed,
        };
        let actions: Vec<Action> = deviations.iter().map(|&p| Action::level(p)).collect();
        zoo::deviation_gap(self, &vec![Strategy::VirtualCost; n], i, types, &actions, &settings)
    }

    /// Equilibrium profile `σ = φ`.
    pub fn equilibrium_profile(&self) -> Vec<Strategy> {
        vec![Strategy::VirtualCost; self.mech.instance().n()]
    }

    /// Cap curves: for each firm and each `x` on `grid`, the cap when every
    /// other firm prices at `x`.
    pub fn cap_curves(&self, grid: &[f64]) -> Vec<CapRow> {
        let n = self.mech.instance().n();
        (0..n)
            .flat_map(|i| grid.iter().map(move |&x| (i, x)))
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&(i, x)| {
                let s = vec![x; n];
                CapRow { firm: i + 1, others: vec![x; n - 1], cap: self.cap(i, &s) }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapRow {
    pub firm: usize,
    pub others: Vec<f64>,
    pub cap: f64,
}

impl MarketStructure for PryceCap {
    fn name(&self) -> String {
        if self.caps { "pryce cap" } else { "pryce cap without caps" }.to_string()
    }

    fn instance(&self) -> &MarketInstance {
        self.mech.instance()
    }

    fn outcome(&self, actions: &[Action]) -> Result<Outcome> {
        let inst = self.mech.instance();
        let n = inst.n();
        let mut prices = vec![inst.v_max(); n];
        let mut participants = 0u32;
        for (i, a) in actions.iter().enumerate() {
            match a {
                Action::OptOut => {}
                Action::Level { level } => {
                    prices[i] = *level;
                    participants |= 1 << i;
                }
                Action::Follow { .. } => {
                    return Err(crate::Error::InvalidStructure(
                        "follow plans only exist under entry deterrence".into(),
                    ))
                }
            }
        }
        let set = self.membership(&prices, participants);
        let wins = inst.values().win_stats(&prices, set.0);
        let mut out = Outcome::zero(n);
        for i in bits(participants) {
            if set.contains(i) {
                out.entry[i] = 1.0;
                out.quantity[i] = wins[i].prob;
                out.value[i] = wins[i].value;
            }
            out.revenue[i] = prices[i] * out.quantity[i] - self.tau(i, prices[i]);
        }
        assert_feasible(&out);
        Ok(out)
    }

    fn virtual_costs(&self) -> Option<&[VirtualCost]> {
        Some(self.mech.virtual_costs())
    }
}

/// Sample sizes and tolerances for the equivalence check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivalenceSettings {
    /// Fresh type draws (midpoint nodes for a single firm).
    pub draws: usize,
    /// Own-type grid points for the per-draw profit integrals.
    pub own_points: usize,
    /// Number of standard errors allowed.
    pub k: f64,
    /// Absolute allowance for grid discretization.
    pub allowance: f64,
    pub seed: u64,
}

impl Default for EquivalenceSettings {
    fn default() -> Self {
        Self { draws: 1024, own_points: 64, k: 3.0, allowance: 5e-4, seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferCheck {
    pub firm: usize,
    /// `E[t^P_i]` on the fresh draws.
    pub realized: Estimate,
    /// `∫ T*_i dG_i` from the mechanism tables.
    pub table: Estimate,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub draws: usize,
    pub entrant_mismatches: usize,
    pub allocation_mismatches: usize,
    pub transfers: Vec<TransferCheck>,
    /// Mechanism objective (per-draw virtual surplus).
    pub direct_objective: Estimate,
    /// Cap-structure objective (per-draw `CS + Σ ∫ π dΛ`).
    pub cap_objective: Estimate,
    /// Standard error of the paired per-draw difference.
    pub paired_std_err: f64,
    pub objective_passed: bool,
    pub passed: bool,
}

/// Compares the direct mechanism with the cap structure at `σ = φ` on
/// shared type draws: entrant sets and allocations pointwise, per-firm
/// transfers and the weighted objective statistically.
pub fn check_equivalence(cap: &PryceCap, settings: &EquivalenceSettings) -> Result<EquivalenceReport> {
    let mech = cap.mechanism();
    let inst = mech.instance();
    let n = inst.n();
    let sample = if n == 1 {
        TypeSample::full(inst, settings.draws, settings.draws, settings.seed)
    } else {
        TypeSample::monte_carlo(inst, settings.draws, settings.seed)
    };
    let values: Vec<Vec<f64>> = crate::probkit::integrate::par_generate(
        sample.len(),
        settings.seed.wrapping_add(1),
        |rng| inst.values().sample(rng),
    );
    let grids: Vec<Vec<f64>> = inst
        .firms()
        .iter()
        .map(|f| crate::mechanism::own_grid(&f.dist, &f.weight, settings.own_points))
        .collect();

    struct Row {
        entrant_match: bool,
        allocation_match: bool,
        revenue: Vec<f64>,
        direct: f64,
        cap_y: f64,
    }
    let rows: Vec<Row> = sample
        .points
        .par_iter()
        .zip(&values)
        .map(|(theta, v)| {
            let x = mech.phi(theta);
            let direct_set = mech.entrants(theta);
            let cap_set = cap.membership(&x, inst.all());
            let direct_mu = mech.allocation(v, theta);
            let cap_mu = crate::mechanism::allocation_share(v, &x, cap_set);
            let direct = crate::mechanism::subset_virtual_surplus(inst, &x, direct_set);
            let actions: Vec<Action> = x.iter().map(|&p| Action::level(p)).collect();
            let out = cap.outcome(&actions)?;
            let mut y = out.consumer_surplus();
            for i in 0..n {
                let f = inst.firm(i);
                let mut a = actions.clone();
                let row: Vec<f64> = grids[i]
                    .iter()
                    .map(|&t| {
                        a[i] = Action::level(cap.equilibrium_strategy(i, t));
                        cap.outcome(&a).map(|o| o.profit(i, t, f.kappa))
                    })
                    .collect::<Result<_>>()?;
                y += crate::probkit::stieltjes(&grids[i], &row, &f.weight, &f.dist)?;
            }
            Ok(Row {
                entrant_match: direct_set == cap_set,
                allocation_match: direct_mu == cap_mu,
                revenue: out.revenue,
                direct,
                cap_y: y,
            })
        })
        .collect::<Result<_>>()?;

    let transfers: Vec<TransferCheck> = (0..n)
        .map(|i| {
            let rev: Vec<f64> = rows.iter().map(|r| r.revenue[i]).collect();
            let realized = sample.estimate(&rev);
            let t = mech.table(i);
            let q: Vec<f64> = t.theta.iter().map(|&th| inst.firm(i).dist.cdf(th)).collect();
            let value = trapezoid_weights(&q).iter().zip(&t.transfer).map(|(w, x)| w * x).sum();
            let table = Estimate { value, std_err: mech.noise(i).sales_se };
            let passed = realized.agrees(&table, settings.k, settings.allowance);
            TransferCheck { firm: i + 1, realized, table, passed }
        })
        .collect();

    let direct: Vec<f64> = rows.iter().map(|r| r.direct).collect();
    let capy: Vec<f64> = rows.iter().map(|r| r.cap_y).collect();
    let diff: Vec<f64> = direct.iter().zip(&capy).map(|(a, b)| a - b).collect();
    let direct_objective = sample.estimate(&direct);
    let cap_objective = sample.estimate(&capy);
    let paired = sample.estimate(&diff);
    let objective_passed = paired.value.abs() <= settings.k * paired.std_err + settings.allowance;
    let entrant_mismatches = rows.iter().filter(|r| !r.entrant_match).count();
    let allocation_mismatches = rows.iter().filter(|r| !r.allocation_match).count();
    let passed = entrant_mismatches == 0
        && allocation_mismatches == 0
        && objective_passed
        && transfers.iter().all(|t| t.passed);
    Ok(EquivalenceReport {
        draws: rows.len(),
        entrant_mismatches,
        allocation_mismatches,
        transfers,
        direct_objective,
        cap_objective,
        paired_std_err: paired.std_err,
        objective_passed,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::Firm;
    use crate::mechanism::MechanismSettings;
    use crate::probkit::{ParetoWeight, TypeDistribution, ValueModel};

    fn unit() -> TypeDistribution {
        TypeDistribution::uniform(0.0, 1.0).unwrap()
    }

    pub(crate) fn figure_instance() -> MarketInstance {
        let firm = Firm { dist: unit(), weight: ParetoWeight::full(), kappa: 1.0 };
        MarketInstance::new(vec![firm.clone(), firm], ValueModel::iid(2, unit()).unwrap()).unwrap()
    }

    fn monopoly() -> MarketInstance {
        let firm = Firm { dist: unit(), weight: ParetoWeight::full(), kappa: 0.0 };
        MarketInstance::new(vec![firm], ValueModel::iid(1, unit()).unwrap()).unwrap()
    }

    #[test]
    fn entrant_sets_from_prices() {
        let inst = figure_instance();
        assert_eq!(entrant_set_from_prices(&inst, &[0.05, 0.05]), EntrantSet(3));
        assert_eq!(entrant_set_from_prices(&inst, &[0.3, 0.3]), EntrantSet::EMPTY);
        assert_eq!(entrant_set_from_prices(&inst, &[0.2, 0.9]), EntrantSet(1));
    }

    #[test]
    fn caps_of_the_figure_instance() {
        let inst = figure_instance();
        let root = 2.0 - 3f64.sqrt();
        for s2 in [0.28, 0.5, 0.9] {
            assert!((price_cap(&inst, 0, &[0.0, s2]) - root).abs() < 5e-4);
        }
        // Oracle: bisection on W({1,2}) - W({2}) at s_2 = 0 with closed forms
        // W({2}) = 1/2 - s, W({1,2}) = E[max(v1 - s, v2)^+] - s.
        // E[max(v1 - s, v2)] = ∫_0^1 (1 - P(v1 < t + s) P(v2 < t)) dt by midpoint rule.
        let gain = |s: f64| {
            let n = 200_000;
            let h = 1.0 / n as f64;
            let e: f64 = (0..n)
                .map(|k| {
                    let t = (k as f64 + 0.5) * h;
                    1.0 - (t + s).min(1.0) * t
                })
                .sum::<f64>()
                * h;
            e - s - 0.5
        };
        let (mut lo, mut hi) = (0.0, 0.3);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if gain(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let cap0 = price_cap(&inst, 0, &[0.0, 0.0]);
        assert!((cap0 - lo).abs() < 1e-3, "{cap0} vs {lo}");
        assert!((cap0 - 0.1154).abs() < 1e-3);
        assert!(price_cap(&inst, 0, &[0.0, 0.05]) <= price_cap(&inst, 0, &[0.0, 0.15]));
    }

    #[test]
    fn single_firm_lump_sums_and_revenue() {
        let mech = DirectMechanism::build(&monopoly(), &MechanismSettings::default()).unwrap();
        let cap = PryceCap::new(mech);
        assert!((cap.lump_sum(0, 0.0) + 0.5).abs() < 1e-4);
        let t = cap.revenue(0, &[0.0], RevenueMode::Realized);
        assert!((t - 0.5).abs() < 1e-4);
        assert!((cap.revenue(0, &[0.3], RevenueMode::Interim) - cap.revenue(0, &[0.3], RevenueMode::Realized)).abs() < 1e-9);
        assert!((cap.equilibrium_strategy(0, 0.4) - 0.4).abs() < 1e-9);
        let out = cap.outcome(&[Action::OptOut]).unwrap();
        assert_eq!((out.entry[0], out.quantity[0], out.revenue[0]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn excluded_firm_pays_nothing() {
        let firm = Firm { dist: TypeDistribution::uniform(0.0, 2.0).unwrap(), weight: ParetoWeight::full(), kappa: 0.5 };
        let inst = MarketInstance::new(vec![firm], ValueModel::iid(1, unit()).unwrap()).unwrap();
        let cap = PryceCap::new(DirectMechanism::build(&inst, &MechanismSettings::light(0)).unwrap());
        assert_eq!(cap.lump_sum(0, 1.5), 0.0);
        assert_eq!(cap.revenue(0, &[1.5], RevenueMode::Realized), 0.0);
    }

    #[test]
    fn equivalence_on_the_figure_instance() {
        let mech = DirectMechanism::build(&figure_instance(), &MechanismSettings::light(3)).unwrap();
        let cap = PryceCap::new(mech.clone());
        let settings = EquivalenceSettings { draws: 512, own_points: 48, ..Default::default() };
        let report = check_equivalence(&cap, &settings).unwrap();
        assert!(report.passed, "{report:?}");

        let types = unit().quantile_grid(32);
        let devs = cap.deviation_prices(0, 64);
        let gap = cap.best_response_gap(0, &types, &devs).unwrap();
        assert!(gap <= 1e-3, "{gap}");
        let untaxed = check_equivalence(&cap.clone().without_lump_sums(), &settings).unwrap();
        assert!(untaxed.transfers.iter().any(|t| !t.passed));

        let open = cap.clone().without_caps();
        let open_gap = open.best_response_gap(0, &types, &devs).unwrap();
        assert!(open_gap >= 0.0);
    }

    #[test]
    fn single_firm_equivalence_is_tight() {
        let mech = DirectMechanism::build(&monopoly(), &MechanismSettings::default()).unwrap();
        let cap = PryceCap::new(mech);
        let settings = EquivalenceSettings { draws: 2048, own_points: 128, allowance: 2e-5, ..Default::default() };
        let report = check_equivalence(&cap, &settings).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.transfers[0].realized.std_err, 0.0);
        let gap = cap.best_response_gap(0, &unit().quantile_grid(64), &cap.deviation_prices(0, 128)).unwrap();
        assert!(gap <= 1e-6, "{gap}");
    }
}
