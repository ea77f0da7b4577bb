use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Action, MarketStructure, Outcome, Strategy};
use crate::error::{Error, Result};
use crate::instance::MarketInstance;
use crate::ironing::{self, VirtualCost};
use crate::mechanism::{own_grid, trapezoid_weights, TypeSample};
use crate::probkit::{stieltjes, Estimate};

/// Sample sizes for welfare evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Midpoint nodes per type axis when there are at most two firms.
    pub nodes: usize,
    /// Monte Carlo type draws for three or more firms.
    pub draws: usize,
    /// Own-type grid points for interim profit curves.
    pub own_points: usize,
    pub iron_cells: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { nodes: 96, draws: 2048, own_points: 96, iron_cells: ironing::DEFAULT_CELLS, seed: 0 }
    }
}

impl EvalSettings {
    pub fn light(seed: u64) -> Self {
        Self { nodes: 48, draws: 512, own_points: 48, iron_cells: 4000, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfitCurve {
    pub firm: usize,
    pub theta: Vec<f64>,
    pub profit: Vec<f64>,
}

/// Welfare of one structure under one strategy profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelfareReport {
    pub structure: String,
    /// `Σ(M, σ)`.
    pub consumer_surplus: Estimate,
    /// Interim profits `Π_i(θ_i)`.
    pub profits: Vec<ProfitCurve>,
    /// `Σ + Σ_i ∫ Π_i dΛ_i`.
    pub objective: Estimate,
    /// `E[t_i]` per firm.
    pub revenue: Vec<f64>,
    /// `∫ Π_i dG_i` per firm.
    pub expected_profit: Vec<f64>,
}

fn virtual_costs(
    structure: &dyn MarketStructure,
    profile: &[Strategy],
    iron_cells: usize,
) -> Result<Vec<Option<VirtualCost>>> {
    let inst = structure.instance();
    (0..inst.n())
        .map(|i| {
            if !profile[i].needs_virtual_cost() {
                return Ok(None);
            }
            if let Some(vcs) = structure.virtual_costs() {
                return Ok(Some(vcs[i].clone()));
            }
            let f = inst.firm(i);
            ironing::iron(&f.dist, &f.weight, iron_cells).map(Some)
        })
        .collect()
}

struct Profile<'a> {
    strategies: &'a [Strategy],
    phis: Vec<Option<VirtualCost>>,
}

impl Profile<'_> {
    fn actions(&self, theta: &[f64]) -> Result<Vec<Action>> {
        self.strategies
            .iter()
            .enumerate()
            .map(|(i, s)| s.action(theta[i], self.phis[i].as_ref()))
            .collect()
    }
}

fn prepare<'a>(
    structure: &dyn MarketStructure,
    profile: &'a [Strategy],
    iron_cells: usize,
) -> Result<Profile<'a>> {
    let n = structure.instance().n();
    if profile.len() != n {
        return Err(Error::InvalidStructure(format!("{} strategies for {n} firms", profile.len())));
    }
    for s in profile {
        s.validate()?;
    }
    Ok(Profile { strategies: profile, phis: virtual_costs(structure, profile, iron_cells)? })
}

/// Profits of firm `i` at every own type on `grid`, opponents at `theta`.
fn profit_row(
    structure: &dyn MarketStructure,
    profile: &Profile,
    i: usize,
    grid: &[f64],
    theta: &[f64],
) -> Result<Vec<f64>> {
    let kappa = structure.instance().firm(i).kappa;
    let mut actions = profile.actions(theta)?;
    let mut cache: Option<(Action, Outcome)> = None;
    grid.iter()
        .map(|&t| {
            actions[i] = profile.strategies[i].action(t, profile.phis[i].as_ref())?;
            let reuse = matches!(&cache, Some((a, _)) if *a == actions[i]);
            if !reuse {
                cache = Some((actions[i].clone(), structure.outcome(&actions)?));
            }
            Ok(cache.as_ref().map_or(0.0, |(_, o)| o.profit(i, t, kappa)))
        })
        .collect()
}

/// Evaluates consumer surplus, interim profits and the weighted objective.
///
/// With at most two firms everything is midpoint quadrature. Beyond that the
/// objective is the mean of the per-draw estimator
/// `Y_m = CS(θ^m) + Σ_i ∫ π_i(·, θ^m_{-i}) dΛ_i`, whose sample spread gives
/// the standard error.
pub fn evaluate(
    structure: &dyn MarketStructure,
    profile: &[Strategy],
    settings: &EvalSettings,
) -> Result<WelfareReport> {
    let inst = structure.instance();
    let n = inst.n();
    let prof = prepare(structure, profile, settings.iron_cells)?;
    let grids: Vec<Vec<f64>> =
        inst.firms().iter().map(|f| own_grid(&f.dist, &f.weight, settings.own_points)).collect();
    let full = TypeSample::full(inst, settings.nodes, settings.draws, settings.seed);

    let rows: Vec<(f64, Vec<f64>)> = full
        .points
        .par_iter()
        .map(|theta| {
            let out = structure.outcome(&prof.actions(theta)?)?;
            Ok((out.consumer_surplus(), out.revenue))
        })
        .collect::<Result<_>>()?;
    let cs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let revenue: Vec<f64> =
        (0..n).map(|i| rows.iter().map(|r| r.1[i]).sum::<f64>() / rows.len() as f64).collect();

    let mut curves = Vec::with_capacity(n);
    let objective;
    if full.exact {
        let mut weighted = 0.0;
        for i in 0..n {
            let opp = TypeSample::opponents(inst, i, settings.nodes, settings.draws, settings.seed);
            let sums = opp
                .points
                .par_iter()
                .map(|theta| profit_row(structure, &prof, i, &grids[i], theta))
                .collect::<Result<Vec<_>>>()?;
            let curve = column_means(&sums, grids[i].len());
            let f = inst.firm(i);
            weighted += stieltjes(&grids[i], &curve, &f.weight, &f.dist)?;
            curves.push(curve);
        }
        objective = Estimate::exact(Estimate::from_samples(&cs).value + weighted);
    } else {
        let per_draw = full
            .points
            .par_iter()
            .zip(&cs)
            .map(|(theta, &c)| {
                let mut y = c;
                let mut rows = Vec::with_capacity(n);
                for i in 0..n {
                    let row = profit_row(structure, &prof, i, &grids[i], theta)?;
                    let f = inst.firm(i);
                    y += stieltjes(&grids[i], &row, &f.weight, &f.dist)?;
                    rows.push(row);
                }
                Ok((y, rows))
            })
            .collect::<Result<Vec<_>>>()?;
        let ys: Vec<f64> = per_draw.iter().map(|d| d.0).collect();
        objective = Estimate::from_samples(&ys);
        for i in 0..n {
            let rows: Vec<Vec<f64>> = per_draw.iter().map(|d| d.1[i].clone()).collect();
            curves.push(column_means(&rows, grids[i].len()));
        }
    }

    let expected_profit = (0..n)
        .map(|i| {
            let q: Vec<f64> = grids[i].iter().map(|&t| inst.firm(i).dist.cdf(t)).collect();
            trapezoid_weights(&q).iter().zip(&curves[i]).map(|(w, p)| w * p).sum()
        })
        .collect();
    let profits = curves
        .into_iter()
        .enumerate()
        .map(|(i, profit)| ProfitCurve { firm: i + 1, theta: grids[i].clone(), profit })
        .collect();
    Ok(WelfareReport {
        structure: structure.name(),
        consumer_surplus: full.estimate(&cs),
        profits,
        objective,
        revenue,
        expected_profit,
    })
}

fn column_means(rows: &[Vec<f64>], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let m = rows.len().max(1) as f64;
    out.iter().map(|o| o / m).collect()
}

/// Largest interim gain of firm `i` from a unilateral deviation to any
/// action in `deviations` (opt-out always included), over the types in
/// `types`, against the opponents' strategies in `profile`.
pub fn deviation_gap(
    structure: &dyn MarketStructure,
    profile: &[Strategy],
    i: usize,
    types: &[f64],
    deviations: &[Action],
    settings: &EvalSettings,
) -> Result<f64> {
    let inst = structure.instance();
    let prof = prepare(structure, profile, settings.iron_cells)?;
    let opp = TypeSample::opponents(inst, i, settings.nodes, settings.draws, settings.seed);
    let kappa = inst.firm(i).kappa;
    let opp_actions: Vec<Vec<Action>> =
        opp.points.iter().map(|t| prof.actions(t)).collect::<Result<_>>()?;

    // Interim payoff of an action is E[t] - θ E[r(q + κ)], linear in θ.
    let moments = |a: &Action| -> Result<(f64, f64)> {
        let mut rev = 0.0;
        let mut load = 0.0;
        for others in &opp_actions {
            let mut profile = others.clone();
            profile[i] = a.clone();
            let out = structure.outcome(&profile)?;
            rev += out.revenue[i];
            load += out.entry[i] * (out.quantity[i] + kappa);
        }
        let m = opp_actions.len() as f64;
        Ok((rev / m, load / m))
    };
    let dev: Vec<(f64, f64)> = deviations.par_iter().map(moments).collect::<Result<_>>()?;
    let gaps: Vec<f64> = types
        .par_iter()
        .map(|&t| {
            let own = prof.strategies[i].action(t, prof.phis[i].as_ref())?;
            let (r0, l0) = moments(&own)?;
            let stay = r0 - t * l0;
            let best = dev.iter().map(|(r, l)| r - t * l).fold(0.0, f64::max);
            Ok((best - stay).max(0.0))
        })
        .collect::<Result<_>>()?;
    Ok(gaps.into_iter().fold(0.0, f64::max))
}

/// `points` evenly spaced levels on `[lo, hi]`.
pub fn price_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect()
}

/// Monopoly pricing of firm 1 by grid search: for each type on a quantile
/// grid, the price on `prices` maximizing `(p - θ) P(v_1 ≥ p) - θκ`, or
/// opt-out when that is negative.
pub fn monopoly_price_table(inst: &MarketInstance, types: usize, prices: &[f64]) -> Strategy {
    let firm = inst.firm(0);
    let m = inst.values().marginal(0);
    let demand: Vec<f64> = prices.iter().map(|&p| m.survival(p)).collect();
    let theta = firm.dist.quantile_grid(types.max(2));
    let levels = theta
        .iter()
        .map(|&t| {
            let (best, profit) = prices
                .iter()
                .zip(&demand)
                .map(|(&p, &d)| (p, (p - t) * d - t * firm.kappa))
                .fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            (profit >= 0.0).then_some(best)
        })
        .collect();
    Strategy::Table { theta, levels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::Firm;
    use crate::probkit::{ParetoWeight, TypeDistribution, ValueModel};
    use crate::zoo::Canonical;

    fn unit() -> TypeDistribution {
        TypeDistribution::uniform(0.0, 1.0).unwrap()
    }

    fn market(values: ValueModel, kappa: f64) -> MarketInstance {
        let n = values.dimension();
        let firm = Firm { dist: unit(), weight: ParetoWeight::full(), kappa };
        MarketInstance::new(vec![firm; n], values).unwrap()
    }

    #[test]
    fn monopoly_at_half_price() {
        let inst = market(ValueModel::iid(1, unit()).unwrap(), 0.0);
        let report = evaluate(
            &Canonical::monopoly(&inst),
            &[Strategy::Constant { level: 0.5 }],
            &EvalSettings::default(),
        )
        .unwrap();
        assert!((report.consumer_surplus.value - 0.125).abs() < 1e-6);
        let curve = &report.profits[0];
        for (t, p) in curve.theta.iter().zip(&curve.profit) {
            assert!((p - (0.25 - 0.5 * t)).abs() < 1e-12);
        }
        // Λ = G: objective is consumer surplus plus ∫(0.25 - θ/2) dθ = 0.125 + 0.
        assert!((report.objective.value - 0.125).abs() < 1e-4);
    }

    #[test]
    fn comonotone_free_goods() {
        let inst = market(ValueModel::comonotone(2, unit()).unwrap(), 0.0);
        let s = Strategy::Constant { level: 0.0 };
        let report =
            evaluate(&Canonical::price_competition(&inst), &[s.clone(), s], &EvalSettings::light(0))
                .unwrap();
        assert!((report.consumer_surplus.value - 0.5).abs() < 1e-9);
    }

    #[test]
    fn all_opt_out_is_zero() {
        let inst = market(ValueModel::iid(3, unit()).unwrap(), 1.0);
        let report = evaluate(
            &Canonical::price_competition(&inst),
            &vec![Strategy::OptOut; 3],
            &EvalSettings::light(3),
        )
        .unwrap();
        assert_eq!(report.consumer_surplus.value, 0.0);
        assert_eq!(report.objective.value, 0.0);
        assert!(report.profits.iter().all(|c| c.profit.iter().all(|&p| p == 0.0)));
    }

    #[test]
    fn deviation_gaps() {
        let inst = market(ValueModel::iid(1, unit()).unwrap(), 0.0);
        let prices = price_grid(0.0, 1.0, 201);
        let table = monopoly_price_table(&inst, 64, &prices);
        let mono = Canonical::monopoly(&inst);
        let devs: Vec<Action> = prices.iter().map(|&p| Action::level(p)).collect();
        let types = unit().quantile_grid(64);
        let s = EvalSettings::light(0);
        let gap = deviation_gap(&mono, &[table], 0, &types, &devs, &s).unwrap();
        assert!(gap <= 1e-12, "{gap}");
        let lazy = deviation_gap(&mono, &[Strategy::OptOut], 0, &types, &devs, &s).unwrap();
        assert!(lazy > 0.2);
    }

    #[test]
    fn three_firm_estimates_carry_errors() {
        let inst = market(ValueModel::iid(3, unit()).unwrap().with_line_nodes(512), 0.2);
        let report = evaluate(
            &Canonical::price_competition(&inst),
            &vec![Strategy::Scaled { a: 0.1, b: 1.0 }; 3],
            &EvalSettings::light(5),
        )
        .unwrap();
        assert!(report.objective.std_err > 0.0 && report.objective.std_err < 0.05);
    }
}
