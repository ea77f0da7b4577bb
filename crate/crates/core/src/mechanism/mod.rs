//! The efficient direct mechanism: entrant sets chosen by virtual surplus,
//! allocation to the best virtual surplus, transfers from the envelope formula.

pub mod verify;

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{EntrantSet, MarketInstance};
use crate::ironing::{self, VirtualCost};
use crate::probkit::integrate::{par_generate, Estimate};
use crate::probkit::{stieltjes, ParetoWeight, TypeDistribution, ValueModel, WinStats};

pub use verify::{envelope_transfers, monotonicity_violation, verify_ic, verify_ir, InterimTable};

/// Relative tolerance under which two subset values count as tied.
const TIE: f64 = 1e-12;

/// `E[max_{i∈E}(v_i - x_i)^+] - Σ_{i∈E} x_i κ_i`.
pub fn subset_virtual_surplus(inst: &MarketInstance, x: &[f64], set: EntrantSet) -> f64 {
    let gross = inst.values().expect_max_surplus(x, set.0);
    gross - set.members().map(|i| x[i] * inst.firm(i).kappa).sum::<f64>()
}

/// Picks the best subset of `allowed` given tabulated gross surpluses.
/// Near-ties go to the smaller set, then to the smaller bitmask.
pub fn best_subset(surplus: &[f64], x: &[f64], kappa: &[f64], allowed: u32) -> (EntrantSet, f64) {
    let n = x.len();
    let mut best = (EntrantSet::EMPTY, 0.0f64);
    for size in 1..=allowed.count_ones() {
        for mask in 1..(1u32 << n) {
            if mask & !allowed != 0 || mask.count_ones() != size {
                continue;
            }
            let set = EntrantSet(mask);
            let value = surplus[mask as usize] - set.members().map(|i| x[i] * kappa[i]).sum::<f64>();
            if value > best.1 + TIE * best.1.abs().max(1.0) {
                best = (set, value);
            }
        }
    }
    best
}

/// Entrant set maximizing virtual surplus at virtual costs `x`.
pub fn select_entrants(inst: &MarketInstance, x: &[f64]) -> EntrantSet {
    select_among(inst, x, inst.all()).0
}

/// [`select_entrants`] restricted to the firms in `allowed`, with the value
/// of the chosen set.
pub fn select_among(inst: &MarketInstance, x: &[f64], allowed: u32) -> (EntrantSet, f64) {
    let surplus = inst.values().subset_surpluses(x);
    best_subset(&surplus, x, &inst.kappas(), allowed)
}

/// Entrant set, its virtual surplus, and per-firm service statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub set: EntrantSet,
    pub surplus: f64,
    pub wins: Vec<WinStats>,
}

/// Selects entrants among `allowed` and evaluates who serves whom.
pub fn select_and_serve(inst: &MarketInstance, x: &[f64], allowed: u32) -> Selection {
    let (set, surplus) = select_among(inst, x, allowed);
    let wins = inst.values().win_stats(x, set.0);
    Selection { set, surplus, wins }
}

/// `μ*`: equal split over the best nonnegative surpluses within `set`.
pub fn allocation_share(v: &[f64], x: &[f64], set: EntrantSet) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    let top = set.members().map(|i| v[i] - x[i]).fold(f64::NEG_INFINITY, f64::max);
    if top < 0.0 {
        return out;
    }
    let slack = TIE * top.abs().max(1.0);
    let winners: Vec<usize> = set.members().filter(|&i| v[i] - x[i] >= top - slack).collect();
    for &i in &winners {
        out[i] = 1.0 / winners.len() as f64;
    }
    out
}

/// Grid sizes and seeds for building a mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismSettings {
    /// Own-type grid points per firm (quantile-uniform, plus jump knots).
    pub types: usize,
    /// Opponent quadrature nodes when there are two firms.
    pub opponent_nodes: usize,
    /// Opponent Monte Carlo draws for three or more firms.
    pub opponent_draws: usize,
    /// Quadrature nodes per axis for objective estimates (one or two firms).
    pub objective_nodes: usize,
    /// Monte Carlo draws for objective estimates (three or more firms).
    pub objective_draws: usize,
    /// Quantile cells used for ironing.
    pub iron_cells: usize,
    pub seed: u64,
}

impl Default for MechanismSettings {
    fn default() -> Self {
        Self {
            types: 256,
            opponent_nodes: 256,
            opponent_draws: 1024,
            objective_nodes: 128,
            objective_draws: 4096,
            iron_cells: ironing::DEFAULT_CELLS,
            seed: 0,
        }
    }
}

impl MechanismSettings {
    /// Smaller grids for batteries of instances.
    pub fn light(seed: u64) -> Self {
        Self {
            types: 64,
            opponent_nodes: 128,
            opponent_draws: 256,
            objective_nodes: 48,
            objective_draws: 1024,
            iron_cells: 4000,
            seed,
        }
    }
}

/// Type profiles used to average over opponents or over all firms.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeSample {
    /// Full type vectors; when sampling opponents of firm `i`, slot `i` is unused.
    pub points: Vec<Vec<f64>>,
    /// True for deterministic quadrature nodes.
    pub exact: bool,
}

impl TypeSample {
    /// Opponent profiles for firm `i`: nothing to average for a single firm,
    /// midpoint quadrature over the rival for two firms, seeded Monte Carlo
    /// beyond. The Monte Carlo draws are shared by every firm.
    pub fn opponents(inst: &MarketInstance, i: usize, nodes: usize, draws: usize, seed: u64) -> Self {
        let n = inst.n();
        match n {
            1 => Self { points: vec![vec![inst.firm(0).dist.lower()]], exact: true },
            2 => {
                let j = 1 - i;
                let points = inst
                    .firm(j)
                    .dist
                    .midpoint_nodes(nodes)
                    .into_iter()
                    .map(|t| {
                        let mut p = vec![0.0; 2];
                        p[j] = t;
                        p
                    })
                    .collect();
                Self { points, exact: true }
            }
            _ => Self::monte_carlo(inst, draws, seed),
        }
    }

    /// Full type profiles: tensor midpoint nodes for up to two firms,
    /// otherwise seeded Monte Carlo draws.
    pub fn full(inst: &MarketInstance, nodes: usize, draws: usize, seed: u64) -> Self {
        match inst.n() {
            1 => Self {
                points: inst.firm(0).dist.midpoint_nodes(nodes).into_iter().map(|t| vec![t]).collect(),
                exact: true,
            },
            2 => {
                let a = inst.firm(0).dist.midpoint_nodes(nodes);
                let b = inst.firm(1).dist.midpoint_nodes(nodes);
                let points = a.iter().flat_map(|&x| b.iter().map(move |&y| vec![x, y])).collect();
                Self { points, exact: true }
            }
            _ => Self::monte_carlo(inst, draws, seed),
        }
    }

    pub fn monte_carlo(inst: &MarketInstance, draws: usize, seed: u64) -> Self {
        let dists: Vec<&TypeDistribution> = inst.firms().iter().map(|f| &f.dist).collect();
        let points = par_generate(draws, seed, |rng| {
            dists.iter().map(|d| d.quantile(rng.gen())).collect::<Vec<f64>>()
        });
        Self { points, exact: false }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean of per-point values, with a standard error unless exact.
    pub fn estimate(&self, values: &[f64]) -> Estimate {
        let e = Estimate::from_samples(values);
        if self.exact {
            Estimate::exact(e.value)
        } else {
            e
        }
    }
}

/// Interim outcome of firm `i` at one own virtual cost, averaged over a sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QuantityStats {
    /// `E[r(q + κ)]`.
    pub quantity: f64,
    /// `E[r q]`.
    pub sales: f64,
    /// `E[r]`.
    pub entry: f64,
    /// `E[r ∫ v μ dF]`, the gross consumer value firm `i` delivers.
    pub value: f64,
}

type Draw = [f64; 4];

/// Per-draw `[r(q + κ), r q, r, r·value]` for firm `i` posting virtual cost
/// `own` against every profile of precomputed opponent virtual costs.
fn quantity_draws(
    inst: &MarketInstance,
    i: usize,
    own: f64,
    opponent_phis: &[Vec<f64>],
) -> Vec<Draw> {
    let kappas = inst.kappas();
    opponent_phis.iter().map(|row| row_draw(inst, &kappas, i, own, row)).collect()
}

fn row_draw(inst: &MarketInstance, kappas: &[f64], i: usize, own: f64, row: &[f64]) -> Draw {
    let set = selected_with(inst, kappas, i, own, row);
    if !set.contains(i) {
        return [0.0; 4];
    }
    let mut x = row.to_vec();
    x[i] = own;
    let win = inst.values().win_stats(&x, set.0)[i];
    [win.prob + kappas[i], win.prob, 1.0, win.value]
}

/// Entrant set chosen when firm `i` posts `own` against one opponent row.
fn selected_with(inst: &MarketInstance, kappas: &[f64], i: usize, own: f64, row: &[f64]) -> EntrantSet {
    let mut x = row.to_vec();
    x[i] = own;
    let surplus = inst.values().subset_surpluses(&x);
    best_subset(&surplus, &x, kappas, inst.all()).0
}

/// `E_{θ_{-i}}[r*_i(q*_i + κ_i)]` at type `θ` against the given opponent sample.
pub fn expected_quantity(
    inst: &MarketInstance,
    vcs: &[VirtualCost],
    i: usize,
    theta: f64,
    sample: &TypeSample,
) -> QuantityStats {
    let phis = phi_profiles(vcs, sample);
    let draws = quantity_draws(inst, i, vcs[i].eval(theta), &phis);
    average(&draws)
}

fn average(draws: &[Draw]) -> QuantityStats {
    let m = draws.len().max(1) as f64;
    let mut sum = [0.0; 4];
    for d in draws {
        for (a, b) in sum.iter_mut().zip(d) {
            *a += b;
        }
    }
    QuantityStats { quantity: sum[0] / m, sales: sum[1] / m, entry: sum[2] / m, value: sum[3] / m }
}

fn phi_profiles(vcs: &[VirtualCost], sample: &TypeSample) -> Vec<Vec<f64>> {
    sample
        .points
        .iter()
        .map(|p| p.iter().zip(vcs).map(|(&t, vc)| vc.eval(t)).collect())
        .collect()
}

/// Own-type grid: quantile-uniform with `points` points plus the jump knots of `Λ`.
pub fn own_grid(dist: &TypeDistribution, weight: &ParetoWeight, points: usize) -> Vec<f64> {
    let mut grid = dist.quantile_grid(points.max(2));
    grid.extend(weight.jump_knots(dist));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Trapezoid weights of `∫ f dG` for values tabulated at `quantiles`.
pub fn trapezoid_weights(quantiles: &[f64]) -> Vec<f64> {
    let n = quantiles.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let h = 0.5 * (quantiles[k + 1] - quantiles[k]);
        w[k] += h;
        w[k + 1] += h;
    }
    w
}

/// Interim tables of one firm under the efficient mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirmTable {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    /// `Q(θ) = E[r(q + κ)]`.
    pub quantity: Vec<f64>,
    /// `E[r q]`, sales without the fixed-cost term.
    pub sales: Vec<f64>,
    /// `E[r]`.
    pub entry: Vec<f64>,
    /// `E[r ∫ v μ dF]`.
    pub value: Vec<f64>,
    /// `T*(θ) = θQ(θ) + ∫_θ^θ̄ Q`.
    pub transfer: Vec<f64>,
    /// `T*(θ) - θQ(θ)`.
    pub profit: Vec<f64>,
    /// `τ*(θ) = φ(θ)·E[r q] - T*(θ)`.
    pub lump_sum: Vec<f64>,
}

impl FirmTable {
    pub fn interim(&self) -> InterimTable {
        InterimTable {
            theta: self.theta.clone(),
            quantity: self.quantity.clone(),
            transfer: self.transfer.clone(),
        }
    }

    fn lerp(&self, values: &[f64], theta: f64) -> f64 {
        let xs = &self.theta;
        let last = xs.len() - 1;
        if theta <= xs[0] {
            return values[0];
        }
        if theta >= xs[last] {
            return values[last];
        }
        let k = xs.partition_point(|&t| t <= theta) - 1;
        let w = (theta - xs[k]) / (xs[k + 1] - xs[k]);
        values[k] + (values[k + 1] - values[k]) * w
    }

    pub fn transfer_at(&self, theta: f64) -> f64 {
        self.lerp(&self.transfer, theta)
    }

    pub fn lump_sum_at(&self, theta: f64) -> f64 {
        self.lerp(&self.lump_sum, theta)
    }

    pub fn quantity_at(&self, theta: f64) -> f64 {
        self.lerp(&self.quantity, theta)
    }
}

/// Monte Carlo standard errors of two linear functionals of a firm's
/// tables that the equivalence checks compare: `∫ φS dG` and
/// `∫ (φS - T) d(G - Λ)`. Zero when the opponent average is quadrature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TableNoise {
    pub sales_se: f64,
    pub rent_se: f64,
}

/// The efficient direct mechanism with `t̄_i = 0`.
#[derive(Clone, Debug)]
pub struct DirectMechanism {
    instance: MarketInstance,
    virtual_costs: Vec<VirtualCost>,
    tables: Vec<FirmTable>,
    noise: Vec<TableNoise>,
    samples: Vec<TypeSample>,
    /// `∫ (V_i - T_i) dG_i + ∫ Π_i dΛ_i` per firm, and its per-draw values
    /// when the opponent average is Monte Carlo.
    direct_parts: Vec<f64>,
    direct_draws: Vec<Vec<f64>>,
    settings: MechanismSettings,
}

impl DirectMechanism {
    pub fn build(inst: &MarketInstance, settings: &MechanismSettings) -> Result<Self> {
        let vcs = inst
            .firms()
            .iter()
            .map(|f| ironing::iron(&f.dist, &f.weight, settings.iron_cells))
            .collect::<Result<Vec<_>>>()?;
        let mut tables = Vec::with_capacity(inst.n());
        let mut noise = Vec::with_capacity(inst.n());
        let mut samples = Vec::with_capacity(inst.n());
        let mut direct_parts = Vec::with_capacity(inst.n());
        let mut direct_draws = Vec::with_capacity(inst.n());
        for i in 0..inst.n() {
            let firm = inst.firm(i);
            let sample = TypeSample::opponents(
                inst,
                i,
                settings.opponent_nodes,
                settings.opponent_draws,
                settings.seed,
            );
            let phis = phi_profiles(&vcs, &sample);
            let mut grid = own_grid(&firm.dist, &firm.weight, settings.types);
            // Transfers kink where an ironed interval starts or ends.
            grid.extend(vcs[i].flats().iter().flat_map(|f| [f.from, f.to]));
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            let (theta, per_point) = switch_draws(inst, i, &vcs[i], &grid, &phis);
            let phi: Vec<f64> = theta.iter().map(|&t| vcs[i].eval(t)).collect();
            let stats: Vec<QuantityStats> = per_point.iter().map(|d| average(d)).collect();
            let quantity: Vec<f64> = stats.iter().map(|s| s.quantity).collect();
            let sales: Vec<f64> = stats.iter().map(|s| s.sales).collect();
            let entry: Vec<f64> = stats.iter().map(|s| s.entry).collect();
            let value: Vec<f64> = stats.iter().map(|s| s.value).collect();
            let transfer = envelope_transfers(&theta, &quantity, 1.0);
            let profit: Vec<f64> = (0..theta.len()).map(|k| transfer[k] - theta[k] * quantity[k]).collect();
            let lump_sum: Vec<f64> = (0..theta.len()).map(|k| phi[k] * sales[k] - transfer[k]).collect();
            let table =
                FirmTable { theta, phi, quantity, sales, entry, value, transfer, profit, lump_sum };
            direct_parts.push(firm_direct_part(&table, &table.quantity, &table.value, &firm.dist, &firm.weight)?);
            if sample.exact {
                noise.push(TableNoise::default());
                direct_draws.push(Vec::new());
            } else {
                let (n_i, d_i) = table_noise(&table, &per_point, &firm.dist, &firm.weight)?;
                noise.push(n_i);
                direct_draws.push(d_i);
            }
            tables.push(table);
            samples.push(sample);
        }
        Ok(Self {
            instance: inst.clone(),
            virtual_costs: vcs,
            tables,
            noise,
            samples,
            direct_parts,
            direct_draws,
            settings: *settings,
        })
    }

    pub fn instance(&self) -> &MarketInstance {
        &self.instance
    }

    pub fn settings(&self) -> &MechanismSettings {
        &self.settings
    }

    pub fn virtual_costs(&self) -> &[VirtualCost] {
        &self.virtual_costs
    }

    pub fn table(&self, i: usize) -> &FirmTable {
        &self.tables[i]
    }

    pub fn tables(&self) -> &[FirmTable] {
        &self.tables
    }

    pub fn noise(&self, i: usize) -> TableNoise {
        self.noise[i]
    }

    /// Opponent sample behind firm `i`'s tables.
    pub fn opponent_sample(&self, i: usize) -> &TypeSample {
        &self.samples[i]
    }

    pub fn phi(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.virtual_costs).map(|(&t, vc)| vc.eval(t)).collect()
    }

    /// `E*(θ)`.
    pub fn entrants(&self, theta: &[f64]) -> EntrantSet {
        select_entrants(&self.instance, &self.phi(theta))
    }

    /// `r*_i(θ)·μ*_i(v|θ)` for every firm.
    pub fn allocation(&self, v: &[f64], theta: &[f64]) -> Vec<f64> {
        let x = self.phi(theta);
        allocation_share(v, &x, select_entrants(&self.instance, &x))
    }

    /// `T*_i(θ_i)`.
    pub fn transfer(&self, i: usize, theta: f64) -> f64 {
        self.tables[i].transfer_at(theta)
    }

    /// `τ*_i(θ_i)`.
    pub fn lump_sum(&self, i: usize, theta: f64) -> f64 {
        self.tables[i].lump_sum_at(theta)
    }

    /// Expected `Q_i(θ_i)` against this mechanism's opponent sample.
    pub fn expected_quantity(&self, i: usize, theta: f64) -> QuantityStats {
        expected_quantity(&self.instance, &self.virtual_costs, i, theta, &self.samples[i])
    }

    /// The weighted objective, computed twice: as expected virtual surplus
    /// over `sample`, and directly from the interim tables as consumer
    /// surplus plus `Λ`-weighted interim profits.
    pub fn objective(&self, sample: &TypeSample) -> Result<ObjectiveReport> {
        let inst = &self.instance;
        let kappas = inst.kappas();
        let rows: Vec<(f64, f64, u32)> = sample
            .points
            .par_iter()
            .map(|theta| {
                let x = self.phi(theta);
                let sel = select_and_serve(inst, &x, inst.all());
                let gross: f64 = sel.wins.iter().map(|w| w.value).sum();
                let cost: f64 = sel
                    .set
                    .members()
                    .map(|i| theta[i] * (sel.wins[i].prob + kappas[i]))
                    .sum();
                (sel.surplus, gross - cost, sel.set.0)
            })
            .collect();
        let virtual_surplus: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let total: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let direct = self.direct_objective();

        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for r in &rows {
            *counts.entry(r.2).or_default() += 1;
        }
        let entrant_sets = counts
            .into_iter()
            .map(|(mask, c)| (EntrantSet(mask).to_string(), c as f64 / rows.len() as f64))
            .collect();
        Ok(ObjectiveReport {
            virtual_surplus: sample.estimate(&virtual_surplus),
            direct,
            total_surplus: sample.estimate(&total),
            entrant_sets,
        })
    }

    /// `Σ_i [∫ (V_i - T_i) dG_i + ∫ Π_i dΛ_i]` from the interim tables,
    /// where `V_i` is the expected gross value firm `i` delivers.
    pub fn direct_objective(&self) -> Estimate {
        let value = self.direct_parts.iter().sum();
        let m = self.direct_draws.iter().map(Vec::len).max().unwrap_or(0);
        if m == 0 || self.direct_draws.iter().any(|d| !d.is_empty() && d.len() != m) {
            return Estimate::exact(value);
        }
        let per_draw: Vec<f64> = (0..m)
            .map(|k| self.direct_draws.iter().map(|d| d.get(k).copied().unwrap_or(0.0)).sum())
            .collect();
        Estimate { value, std_err: Estimate::from_samples(&per_draw).std_err }
    }

    /// Default full-type sample for objective estimates.
    pub fn objective_sample(&self) -> TypeSample {
        TypeSample::full(
            &self.instance,
            self.settings.objective_nodes,
            self.settings.objective_draws,
            self.settings.seed.wrapping_add(1),
        )
    }

    pub fn report(&self) -> Result<MechanismReport> {
        let objective = self.objective(&self.objective_sample())?;
        let firms = self
            .tables
            .iter()
            .enumerate()
            .map(|(i, t)| FirmReport {
                firm: i + 1,
                rows: (0..t.theta.len())
                    .map(|k| TableRow {
                        theta: t.theta[k],
                        phi: t.phi[k],
                        quantity: t.quantity[k],
                        transfer: t.transfer[k],
                        profit: t.profit[k],
                    })
                    .collect(),
            })
            .collect();
        Ok(MechanismReport { firms, objective })
    }
}

/// Relative half-width of the bracket placed around each selection switch.
const SWITCH_BRACKET: f64 = 1e-9;

/// Per-draw outcomes on `grid` plus, for every opponent row, a pair of
/// points hugging each own type where that row's selected set changes.
///
/// Each row is evaluated only on the grid and its own brackets. Between
/// those points its outcome is smooth, so it is interpolated linearly onto
/// the brackets of the other rows. Switches that open and close between
/// two neighbouring grid points go unnoticed here.
fn switch_draws(
    inst: &MarketInstance,
    i: usize,
    vc: &VirtualCost,
    grid: &[f64],
    phis: &[Vec<f64>],
) -> (Vec<f64>, Vec<Vec<Draw>>) {
    let kappas = inst.kappas();
    let width = (grid[grid.len() - 1] - grid[0]) * SWITCH_BRACKET;
    let rows: Vec<(Vec<f64>, Vec<Draw>)> = phis
        .par_iter()
        .map(|row| {
            let set_at = |t: f64| selected_with(inst, &kappas, i, vc.eval(t), row);
            let sets: Vec<EntrantSet> = grid.iter().map(|&t| set_at(t)).collect();
            let mut knots = grid.to_vec();
            for k in 0..grid.len() - 1 {
                if sets[k] == sets[k + 1] {
                    continue;
                }
                let (mut lo, mut hi) = (grid[k], grid[k + 1]);
                while hi - lo > width {
                    let mid = 0.5 * (lo + hi);
                    if set_at(mid) == sets[k] {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                knots.extend([lo, hi]);
            }
            knots.sort_by(f64::total_cmp);
            knots.dedup();
            let draws = knots.iter().map(|&t| row_draw(inst, &kappas, i, vc.eval(t), row)).collect();
            (knots, draws)
        })
        .collect();
    let mut theta: Vec<f64> = rows.iter().flat_map(|r| r.0.iter().copied()).collect();
    theta.sort_by(f64::total_cmp);
    theta.dedup();
    let per_point = theta
        .par_iter()
        .map(|&t| rows.iter().map(|(knots, draws)| lerp_draw(knots, draws, t)).collect())
        .collect();
    (theta, per_point)
}

fn lerp_draw(knots: &[f64], draws: &[Draw], t: f64) -> Draw {
    let k = knots.partition_point(|&x| x <= t);
    if k == 0 {
        return draws[0];
    }
    if k == knots.len() || knots[k - 1] == t {
        return draws[k - 1];
    }
    let w = (t - knots[k - 1]) / (knots[k] - knots[k - 1]);
    let (a, b) = (draws[k - 1], draws[k]);
    [0, 1, 2, 3].map(|c| a[c] + (b[c] - a[c]) * w)
}

fn firm_direct_part(
    table: &FirmTable,
    quantity: &[f64],
    value: &[f64],
    dist: &TypeDistribution,
    weight: &ParetoWeight,
) -> Result<f64> {
    let q: Vec<f64> = table.theta.iter().map(|&t| dist.cdf(t)).collect();
    let w = trapezoid_weights(&q);
    let transfer = envelope_transfers(&table.theta, quantity, 1.0);
    let profit: Vec<f64> = (0..quantity.len()).map(|k| transfer[k] - table.theta[k] * quantity[k]).collect();
    let net: f64 = (0..quantity.len()).map(|k| w[k] * (value[k] - transfer[k])).sum();
    Ok(net + stieltjes(&table.theta, &profit, weight, dist)?)
}

/// Standard errors of the table functionals, plus per-draw direct-objective parts.
fn table_noise(
    table: &FirmTable,
    per_point: &[Vec<Draw>],
    dist: &TypeDistribution,
    weight: &ParetoWeight,
) -> Result<(TableNoise, Vec<f64>)> {
    let q: Vec<f64> = table.theta.iter().map(|&t| dist.cdf(t)).collect();
    let w = trapezoid_weights(&q);
    let draws = per_point.first().map_or(0, |d| d.len());
    let mut sales_f = Vec::with_capacity(draws);
    let mut rent_f = Vec::with_capacity(draws);
    let mut direct_f = Vec::with_capacity(draws);
    for m in 0..draws {
        let qm: Vec<f64> = per_point.iter().map(|d| d[m][0]).collect();
        let sm: Vec<f64> = per_point.iter().map(|d| d[m][1]).collect();
        let vm: Vec<f64> = per_point.iter().map(|d| d[m][3]).collect();
        direct_f.push(firm_direct_part(table, &qm, &vm, dist, weight)?);
        let tm = envelope_transfers(&table.theta, &qm, 1.0);
        let rent: Vec<f64> = (0..qm.len()).map(|k| table.phi[k] * sm[k] - tm[k]).collect();
        let sales: f64 = (0..qm.len()).map(|k| w[k] * table.phi[k] * sm[k]).sum();
        let rent_g: f64 = w.iter().zip(&rent).map(|(a, b)| a * b).sum();
        let rent_l = stieltjes(&table.theta, &rent, weight, dist)?;
        sales_f.push(sales);
        rent_f.push(rent_g - rent_l);
    }
    let noise = TableNoise {
        sales_se: Estimate::from_samples(&sales_f).std_err,
        rent_se: Estimate::from_samples(&rent_f).std_err,
    };
    Ok((noise, direct_f))
}

/// Objective estimates of the efficient mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    /// `E[max_E (E[max_{i∈E}(v_i - φ_i)^+] - Σ_{i∈E} φ_i κ_i)]`.
    pub virtual_surplus: Estimate,
    /// Consumer surplus plus `Σ_i ∫ Π_i dΛ_i`.
    pub direct: Estimate,
    /// Realized total surplus `E[Σ v μ - Σ r θ (q + κ)]`.
    pub total_surplus: Estimate,
    /// Frequency of each entrant set over the type sample.
    pub entrant_sets: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub theta: f64,
    pub phi: f64,
    pub quantity: f64,
    pub transfer: f64,
    pub profit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirmReport {
    pub firm: usize,
    pub rows: Vec<TableRow>,
}

impl FirmReport {
    pub fn interim(&self) -> InterimTable {
        InterimTable {
            theta: self.rows.iter().map(|r| r.theta).collect(),
            quantity: self.rows.iter().map(|r| r.quantity).collect(),
            transfer: self.rows.iter().map(|r| r.transfer).collect(),
        }
    }
}

/// Serialized mechanism: per-firm tables and objective estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismReport {
    pub firms: Vec<FirmReport>,
    pub objective: ObjectiveReport,
}

/// Result of the table checks on one firm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableCheck {
    pub firm: usize,
    pub ic_violation: f64,
    pub min_profit: f64,
    pub top_profit: f64,
    pub monotonicity_violation: f64,
}

impl TableCheck {
    pub fn passes(&self, ic_tol: f64) -> bool {
        self.ic_violation <= ic_tol
            && self.min_profit >= -1e-9
            && self.top_profit.abs() <= 1e-6
            && self.monotonicity_violation == 0.0
    }
}

/// IC on `check_points` quantile-spaced types against every table report,
/// IR on the whole table, and exact monotonicity of `Q`.
pub fn check_table(firm: usize, table: &InterimTable, check_points: usize) -> TableCheck {
    let n = table.theta.len();
    let types: Vec<f64> = if n <= check_points {
        table.theta.clone()
    } else {
        (0..check_points)
            .map(|k| table.theta[(k * (n - 1)) / (check_points - 1).max(1)])
            .collect()
    };
    let top = table.theta[n - 1];
    TableCheck {
        firm,
        ic_violation: verify_ic(table, &types, &table.theta),
        min_profit: verify_ir(table, &table.theta),
        top_profit: table.payoff(top, top),
        monotonicity_violation: monotonicity_violation(&table.quantity),
    }
}

/// Mechanism checks over every firm of a built mechanism.
pub fn check_mechanism(mech: &DirectMechanism, check_points: usize) -> Vec<TableCheck> {
    mech.tables()
        .iter()
        .enumerate()
        .map(|(i, t)| check_table(i + 1, &t.interim(), check_points))
        .collect()
}

/// `Σ + Σ_i ∫ Π_i dΛ_i` for tabulated interim profits.
pub fn weighted_objective(
    inst: &MarketInstance,
    consumer_surplus: f64,
    profits: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64> {
    if profits.len() != inst.n() {
        return Err(Error::Precondition(format!(
            "{} profit curves for {} firms",
            profits.len(),
            inst.n()
        )));
    }
    let mut total = consumer_surplus;
    for (i, (grid, curve)) in profits.iter().enumerate() {
        let f = inst.firm(i);
        total += stieltjes(grid, curve, &f.weight, &f.dist)?;
    }
    Ok(total)
}

/// Convenience used by the reports: value model surpluses at `x` for all subsets.
pub fn subset_table(values: &ValueModel, x: &[f64]) -> Vec<f64> {
    values.subset_surpluses(x)
}
