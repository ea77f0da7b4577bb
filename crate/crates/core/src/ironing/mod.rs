//! Generalized virtual costs.
//!
//! The cumulative measure `N(θ) = ∫ x dG(x) + ∫ (G - Λ)(x) dx` is tabulated on
//! a grid that is uniform in quantile space and contains every knot of `Λ`.
//! Reparametrized as `H(q) = N(G⁻¹(q))`, its lower convex envelope has a
//! nondecreasing derivative, which is the ironed virtual cost `φ`.

pub mod envelope;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::probkit::{ParetoWeight, TypeDistribution};

/// Default number of quantile cells.
pub const DEFAULT_CELLS: usize = 10_000;

/// Smallest grid `iron` accepts.
pub const MIN_CELLS: usize = 16;

/// Tolerance used to snap a target level onto an existing grid value.
const SNAP: f64 = 1e-7;

/// `N(θ_k)` on a type grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CumulativeMeasure {
    /// Types, increasing.
    pub grid: Vec<f64>,
    /// Quantiles `G(θ_k)`.
    pub quantiles: Vec<f64>,
    pub values: Vec<f64>,
}

impl CumulativeMeasure {
    /// Linear interpolation in `θ`, clamped to the grid.
    pub fn at(&self, theta: f64) -> f64 {
        interpolate(&self.grid, &self.values, theta)
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let k = xs.partition_point(|&t| t <= x) - 1;
    let w = (x - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] + (ys[k + 1] - ys[k]) * w
}

/// Halvings of the first and last quantile cell. The end values of `φ` are
/// extrapolated from neighbouring slopes, and for densities that vanish at
/// an end (power families) that extrapolation is only as good as the end
/// cell is small. Deeper splits lose the slopes to cancellation.
const END_SPLITS: i32 = 12;

/// Quantile-uniform type grid with `cells` cells, split geometrically
/// toward both ends, plus every breakpoint of the weight and of the
/// distribution, sorted and deduplicated.
pub fn type_grid(dist: &TypeDistribution, weight: &ParetoWeight, cells: usize) -> Vec<f64> {
    let mut grid = dist.quantile_grid(cells + 1);
    let first = 1.0 / cells as f64;
    for j in 1..=END_SPLITS {
        let u = first * 0.5f64.powi(j);
        grid.extend([dist.quantile(u), dist.quantile(1.0 - u)]);
    }
    grid.extend(weight.breakpoints(dist));
    grid.extend(weight.jump_knots(dist));
    grid.extend(dist.kinks());
    grid.retain(|t| *t >= dist.lower() && *t <= dist.upper());
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
    grid
}

/// Tabulates `N` on [`type_grid`].
///
/// Each cell adds the exact partial mean of `G` and the trapezoid of
/// `G - Λ`, taking `Λ`'s left limit at the right end so that jumps of `Λ`
/// never leak across a cell.
pub fn cumulative(
    dist: &TypeDistribution,
    weight: &ParetoWeight,
    cells: usize,
) -> Result<CumulativeMeasure> {
    let grid = type_grid(dist, weight, cells.max(1));
    let quantiles: Vec<f64> = grid.iter().map(|&t| dist.cdf(t)).collect();
    let mut values = Vec::with_capacity(grid.len());
    values.push(0.0);
    for k in 0..grid.len() - 1 {
        let (a, b) = (grid[k], grid[k + 1]);
        let gap_a = dist.cdf(a) - weight.value(dist, a);
        let gap_b = dist.cdf(b) - weight.left_limit(dist, b);
        if gap_a < -1e-12 || gap_b < -1e-12 {
            return Err(Error::InvalidWeight(format!("Λ exceeds G near θ = {a}")));
        }
        let step = dist.partial_mean(a, b) + 0.5 * (gap_a + gap_b) * (b - a);
        values.push(values[k] + step);
    }
    Ok(CumulativeMeasure { grid, quantiles, values })
}

/// Ironed virtual cost, piecewise linear in quantile coordinates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VirtualCost {
    pub quantiles: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(skip)]
    theta: Vec<f64>,
    #[serde(skip)]
    dist: TypeDistribution,
}

/// A maximal interval on which `φ` is constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Flat {
    pub from: f64,
    pub to: f64,
    pub value: f64,
}

/// Builds `φ` from a grid of `cells` quantile cells (at least 16).
pub fn iron(dist: &TypeDistribution, weight: &ParetoWeight, cells: usize) -> Result<VirtualCost> {
    if cells < MIN_CELLS {
        return Err(Error::GridTooCoarse(cells));
    }
    let n = cumulative(dist, weight, cells)?;
    let mut values = envelope::envelope_slopes(&n.quantiles, &n.values);
    let mut floor = dist.lower();
    for v in &mut values {
        floor = v.max(floor);
        *v = floor;
    }
    Ok(VirtualCost { quantiles: n.quantiles, values, theta: n.grid, dist: dist.clone() })
}

impl VirtualCost {
    pub fn lower(&self) -> f64 {
        self.dist.lower()
    }

    pub fn upper(&self) -> f64 {
        self.dist.upper()
    }

    pub fn distribution(&self) -> &TypeDistribution {
        &self.dist
    }

    /// Types at the grid points.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// `φ` at quantile `q`.
    pub fn at_quantile(&self, q: f64) -> f64 {
        let qs = &self.quantiles;
        let last = qs.len() - 1;
        if q <= qs[0] {
            return self.values[0];
        }
        if q >= qs[last] {
            return self.values[last];
        }
        let k = qs.partition_point(|&x| x <= q) - 1;
        let w = (q - qs[k]) / (qs[k + 1] - qs[k]);
        let (a, b) = (self.values[k], self.values[k + 1]);
        (a + (b - a) * w).min(b)
    }

    /// `φ(θ)`, nondecreasing in `θ`.
    pub fn eval(&self, theta: f64) -> f64 {
        self.at_quantile(self.dist.cdf(theta))
    }

    /// `inf{θ : φ(θ) ≥ s}`, clamped to the support.
    ///
    /// Levels within `1e-7` of a grid value snap onto the first such grid
    /// point, so a flat segment resolves to its left end.
    pub fn pseudo_inverse(&self, s: f64) -> f64 {
        let v = &self.values;
        let last = v.len() - 1;
        if s <= v[0] {
            return self.lower();
        }
        if s > v[last] {
            return self.upper();
        }
        let snap = SNAP * s.abs().max(1.0);
        let k = v.partition_point(|&x| x < s - snap);
        if k == 0 {
            return self.lower();
        }
        if v[k] <= s + snap {
            return self.theta[k];
        }
        let w = (s - v[k - 1]) / (v[k] - v[k - 1]);
        let q = self.quantiles[k - 1] + (self.quantiles[k] - self.quantiles[k - 1]) * w;
        self.dist.quantile(q).clamp(self.theta[k - 1], self.theta[k])
    }

    /// Maximal runs of equal values spanning at least two grid cells,
    /// reported between the hull vertices that bound them.
    pub fn flats(&self) -> Vec<Flat> {
        let v = &self.values;
        let mut out = Vec::new();
        let mut start = 0;
        while start < v.len() {
            let mut end = start;
            while end + 1 < v.len() && v[end + 1] == v[start] {
                end += 1;
            }
            if end > start {
                let from = start.saturating_sub(1);
                let to = (end + 1).min(v.len() - 1);
                out.push(Flat { from: self.theta[from], to: self.theta[to], value: v[start] });
            }
            start = end + 1;
        }
        out
    }

    /// Grid rows `(θ, G(θ), φ(θ))`.
    pub fn table(&self) -> Vec<[f64; 3]> {
        self.theta
            .iter()
            .zip(&self.quantiles)
            .zip(&self.values)
            .map(|((&t, &q), &p)| [t, q, p])
            .collect()
    }
}

/// Nonincreasing, nonnegative right-open step function:
/// `Q(θ) = levels[k]` where `k` counts the breaks strictly below `θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFunction {
    breaks: Vec<f64>,
    levels: Vec<f64>,
}

impl StepFunction {
    pub fn new(breaks: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if levels.len() != breaks.len() + 1 {
            return Err(Error::Precondition(format!(
                "{} breaks need {} levels, got {}",
                breaks.len(),
                breaks.len() + 1,
                levels.len()
            )));
        }
        if breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Precondition("step breaks must increase strictly".into()));
        }
        if levels.iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::Precondition("step levels must be nonnegative".into()));
        }
        for (k, w) in levels.windows(2).enumerate() {
            if w[1] > w[0] {
                return Err(Error::IncreasingStep(breaks[k]));
            }
        }
        Ok(Self { breaks, levels })
    }

    pub fn constant(level: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![level])
    }

    /// `1{θ ≤ cut}`.
    pub fn indicator_below(cut: f64) -> Self {
        Self { breaks: vec![cut], levels: vec![1.0, 0.0] }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.levels[self.breaks.partition_point(|&b| b < theta)]
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }
}

/// Both sides of the majorization inequality
/// `∫ θQ dG + ∫ (G - Λ)Q dθ ≥ ∫ φQ dG`.
///
/// Integrals run over `φ`'s grid refined by the steps of `Q`; `Q` is
/// constant on every refined cell.
pub fn majorization_gap(
    dist: &TypeDistribution,
    weight: &ParetoWeight,
    vc: &VirtualCost,
    q: &StepFunction,
) -> (f64, f64) {
    let mut grid = vc.theta.clone();
    grid.extend(q.breaks().iter().copied().filter(|&b| b > dist.lower() && b < dist.upper()));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let level = q.eval(0.5 * (a + b));
        if level == 0.0 {
            continue;
        }
        let gap_a = dist.cdf(a) - weight.value(dist, a);
        let gap_b = dist.cdf(b) - weight.left_limit(dist, b);
        lhs += level * (dist.partial_mean(a, b) + 0.5 * (gap_a + gap_b) * (b - a));
        let (qa, qb) = (dist.cdf(a), dist.cdf(b));
        rhs += level * 0.5 * (vc.at_quantile(qa) + vc.at_quantile(qb)) * (qb - qa);
    }
    (lhs, rhs)
}
