//! Pareto weights `Λ` on a firm's type space and Stieltjes integration against them.

use serde::{Deserialize, Serialize};

use super::dist::TypeDistribution;
use crate::error::{Error, Result};

/// Right-continuous piecewise-linear function with finitely many jumps.
///
/// A jump at `θ` is written as two consecutive knots sharing `θ`: the left
/// limit first, then the value. Outside the knot range the function is
/// extended by its end values.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct KnotFn {
    knots: Vec<(f64, f64)>,
}

impl KnotFn {
    fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidWeight("at least one knot is required".into()));
        }
        for w in knots.windows(2) {
            if w[1].0 < w[0].0 {
                return Err(Error::InvalidWeight(format!("knots out of order at θ = {}", w[1].0)));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::InvalidWeight(format!("decreasing at θ = {}", w[1].0)));
            }
        }
        for w in knots.windows(3) {
            if w[0].0 == w[1].0 && w[1].0 == w[2].0 {
                return Err(Error::InvalidWeight(format!("three knots at θ = {}", w[0].0)));
            }
        }
        if knots.iter().any(|&(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::InvalidWeight("knots must be finite".into()));
        }
        Ok(Self { knots })
    }

    fn interpolate(&self, k: usize, x: f64) -> f64 {
        let (t0, v0) = self.knots[k];
        let (t1, v1) = self.knots[k + 1];
        let w = (x - t0) / (t1 - t0);
        (v0 + (v1 - v0) * w).min(v1)
    }

    fn value(&self, x: f64) -> f64 {
        let k = self.knots.partition_point(|&(t, _)| t <= x);
        if k == 0 {
            return self.knots[0].1;
        }
        if k == self.knots.len() {
            return self.knots[k - 1].1;
        }
        self.interpolate(k - 1, x)
    }

    fn left_limit(&self, x: f64) -> f64 {
        let k = self.knots.partition_point(|&(t, _)| t < x);
        if k == 0 {
            return self.knots[0].1;
        }
        if k == self.knots.len() {
            return self.knots[k - 1].1;
        }
        self.interpolate(k - 1, x)
    }

    fn jumps(&self) -> Vec<f64> {
        self.knots
            .windows(2)
            .filter(|w| w[0].0 == w[1].0 && w[1].1 > w[0].1)
            .map(|w| w[0].0)
            .collect()
    }

    fn abscissae(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.knots.iter().map(|k| k.0).collect();
        ts.dedup();
        ts
    }
}

/// Nondecreasing, right-continuous weight `Λ` with `0 ≤ Λ ≤ G`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightSpec", into = "WeightSpec")]
pub struct ParetoWeight {
    shape: Shape,
}

#[derive(Clone, Debug, PartialEq)]
enum Shape {
    /// `Λ(θ)` itself is piecewise linear.
    Knots(KnotFn),
    /// `Λ(θ) = a(θ)·G(θ)` with `a` piecewise linear in `[0, 1]`.
    CdfShare(KnotFn),
}

/// Wire form of a [`ParetoWeight`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    /// `Λ = G`: firm profits carry full weight.
    Full,
    /// `Λ ≡ 0`.
    Zero,
    /// `Λ = α·G`.
    Scaled { alpha: f64 },
    /// `Λ = G·1{θ ≥ at}`.
    CdfFrom { at: f64 },
    Knots { knots: Vec<[f64; 2]> },
    CdfShare { knots: Vec<[f64; 2]> },
}

impl TryFrom<WeightSpec> for ParetoWeight {
    type Error = Error;

    fn try_from(spec: WeightSpec) -> Result<Self> {
        let pairs = |k: Vec<[f64; 2]>| k.into_iter().map(|p| (p[0], p[1])).collect::<Vec<_>>();
        match spec {
            WeightSpec::Full => Ok(Self::full()),
            WeightSpec::Zero => Ok(Self::zero()),
            WeightSpec::Scaled { alpha } => Self::scaled(alpha),
            WeightSpec::CdfFrom { at } => Ok(Self::cdf_from(at)),
            WeightSpec::Knots { knots } => Self::knots(pairs(knots)),
            WeightSpec::CdfShare { knots } => Self::cdf_share(pairs(knots)),
        }
    }
}

impl From<ParetoWeight> for WeightSpec {
    fn from(w: ParetoWeight) -> Self {
        let arrays = |k: &KnotFn| k.knots.iter().map(|&(t, v)| [t, v]).collect();
        match &w.shape {
            Shape::Knots(k) => WeightSpec::Knots { knots: arrays(k) },
            Shape::CdfShare(k) => WeightSpec::CdfShare { knots: arrays(k) },
        }
    }
}

impl ParetoWeight {
    pub fn full() -> Self {
        Self { shape: Shape::CdfShare(KnotFn { knots: vec![(0.0, 1.0)] }) }
    }

    pub fn zero() -> Self {
        Self { shape: Shape::Knots(KnotFn { knots: vec![(0.0, 0.0)] }) }
    }

    pub fn scaled(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidWeight(format!("scale {alpha} outside [0, 1]")));
        }
        Ok(Self { shape: Shape::CdfShare(KnotFn { knots: vec![(0.0, alpha)] }) })
    }

    /// Zero below `at`, equal to `G` from `at` on.
    pub fn cdf_from(at: f64) -> Self {
        Self { shape: Shape::CdfShare(KnotFn { knots: vec![(at, 0.0), (at, 1.0)] }) }
    }

    pub fn knots(knots: Vec<(f64, f64)>) -> Result<Self> {
        let f = KnotFn::new(knots)?;
        if f.knots.iter().any(|k| k.1 < 0.0) {
            return Err(Error::InvalidWeight("negative weight".into()));
        }
        Ok(Self { shape: Shape::Knots(f) })
    }

    pub fn cdf_share(knots: Vec<(f64, f64)>) -> Result<Self> {
        let f = KnotFn::new(knots)?;
        if f.knots.iter().any(|k| !(0.0..=1.0).contains(&k.1)) {
            return Err(Error::InvalidWeight("CDF share outside [0, 1]".into()));
        }
        Ok(Self { shape: Shape::CdfShare(f) })
    }

    /// True when `Λ = G` identically.
    pub fn is_full(&self) -> bool {
        matches!(&self.shape, Shape::CdfShare(f) if f.knots.iter().all(|k| k.1 == 1.0))
    }

    pub fn value(&self, dist: &TypeDistribution, x: f64) -> f64 {
        if x < dist.lower() {
            return 0.0;
        }
        let x = x.min(dist.upper());
        match &self.shape {
            Shape::Knots(f) => f.value(x),
            Shape::CdfShare(f) => f.value(x) * dist.cdf(x),
        }
    }

    /// `Λ(x⁻)`, with `Λ(θ̲⁻) = 0`.
    pub fn left_limit(&self, dist: &TypeDistribution, x: f64) -> f64 {
        if x <= dist.lower() {
            return 0.0;
        }
        let x = x.min(dist.upper());
        match &self.shape {
            Shape::Knots(f) => f.left_limit(x),
            Shape::CdfShare(f) => f.left_limit(x) * dist.cdf(x),
        }
    }

    /// Jump locations inside `[θ̲, θ̄]`.
    pub fn jump_knots(&self, dist: &TypeDistribution) -> Vec<f64> {
        let f = match &self.shape {
            Shape::Knots(f) | Shape::CdfShare(f) => f,
        };
        let mut jumps: Vec<f64> = f
            .jumps()
            .into_iter()
            .filter(|&t| t > dist.lower() && t <= dist.upper())
            .collect();
        if self.value(dist, dist.lower()) > 0.0 {
            jumps.insert(0, dist.lower());
        }
        jumps
    }

    /// Every knot abscissa inside the support (jumps and slope changes).
    pub fn breakpoints(&self, dist: &TypeDistribution) -> Vec<f64> {
        let f = match &self.shape {
            Shape::Knots(f) | Shape::CdfShare(f) => f,
        };
        f.abscissae()
            .into_iter()
            .filter(|&t| t > dist.lower() && t < dist.upper())
            .collect()
    }

    /// Checks monotonicity and `0 ≤ Λ ≤ G` on a 1,000-point grid plus every knot.
    pub fn validate(&self, dist: &TypeDistribution) -> Result<()> {
        let mut grid = dist.quantile_grid(1000);
        grid.extend((0..1000).map(|k| {
            dist.lower() + (dist.upper() - dist.lower()) * k as f64 / 999.0
        }));
        grid.extend(self.breakpoints(dist));
        grid.sort_by(f64::total_cmp);
        let mut prev = 0.0;
        for &t in &grid {
            let left = self.left_limit(dist, t);
            let v = self.value(dist, t);
            if v < 0.0 {
                return Err(Error::InvalidWeight(format!("Λ({t}) = {v} is negative")));
            }
            if v > dist.cdf(t) + 1e-12 {
                return Err(Error::InvalidWeight(format!(
                    "Λ({t}) = {v} exceeds G({t}) = {}",
                    dist.cdf(t)
                )));
            }
            if v < prev - 1e-12 || left > v + 1e-12 {
                return Err(Error::InvalidWeight(format!("Λ decreases near θ = {t}")));
            }
            prev = v;
        }
        Ok(())
    }
}

/// `∫ profit dΛ` over a tabulated profit curve.
///
/// The absolutely continuous part uses the Stieltjes trapezoid rule on each
/// grid cell; jumps contribute `profit(θ_j)·ΔΛ(θ_j)`. Every jump knot of `Λ`
/// must be a grid point.
pub fn stieltjes(
    grid: &[f64],
    profit: &[f64],
    weight: &ParetoWeight,
    dist: &TypeDistribution,
) -> Result<f64> {
    assert_eq!(grid.len(), profit.len(), "profit curve and grid lengths differ");
    if grid.is_empty() {
        return Ok(0.0);
    }
    for jump in weight.jump_knots(dist) {
        let found = grid.iter().any(|&t| (t - jump).abs() <= 1e-12 * (1.0 + jump.abs()));
        if !found {
            return Err(Error::MissingJumpKnot(jump));
        }
    }
    let mut total = 0.0;
    for (k, &t) in grid.iter().enumerate() {
        let jump = weight.value(dist, t) - weight.left_limit(dist, t);
        if jump > 0.0 {
            total += profit[k] * jump;
        }
    }
    for k in 0..grid.len() - 1 {
        let mass = weight.left_limit(dist, grid[k + 1]) - weight.value(dist, grid[k]);
        total += 0.5 * (profit[k] + profit[k + 1]) * mass;
    }
    // mass of Λ outside the tabulated range is attributed to the end points
    let below = weight.left_limit(dist, grid[0]);
    let above = weight.value(dist, dist.upper()) - weight.value(dist, grid[grid.len() - 1]);
    total += profit[0] * below + profit[grid.len() - 1] * above;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> TypeDistribution {
        TypeDistribution::uniform(0.0, 1.0).unwrap()
    }

    fn grid(n: usize) -> Vec<f64> {
        (0..=n).map(|k| k as f64 / n as f64).collect()
    }

    #[test]
    fn constant_profit_integrates_total_mass() {
        let g = unit();
        let jump = ParetoWeight::knots(vec![(0.0, 0.0), (0.5, 0.0), (0.5, 0.4), (1.0, 0.4)]).unwrap();
        for w in [ParetoWeight::full(), ParetoWeight::zero(), ParetoWeight::scaled(0.3).unwrap(), jump] {
            let x = grid(100);
            let ones = vec![1.0; x.len()];
            let got = stieltjes(&x, &ones, &w, &g).unwrap();
            let want = w.value(&g, 1.0) - w.left_limit(&g, 0.0);
            assert!((got - want).abs() < 1e-12, "{w:?}: {got} vs {want}");
        }
    }

    #[test]
    fn point_mass_picks_up_profit_at_jump() {
        let g = unit();
        let w = ParetoWeight::knots(vec![(0.0, 0.0), (0.5, 0.0), (0.5, 0.4), (1.0, 0.4)]).unwrap();
        w.validate(&g).unwrap();
        let x = grid(64);
        let got = stieltjes(&x, &x, &w, &g).unwrap();
        assert!((got - 0.2).abs() < 1e-12);
    }

    #[test]
    fn linear_weight_against_trapezoid_oracle() {
        let g = unit();
        let x = grid(1000);
        let got = stieltjes(&x, &x, &ParetoWeight::full(), &g).unwrap();
        // trapezoid oracle of ∫ θ dθ
        let oracle: f64 = x.windows(2).map(|w| 0.5 * (w[0] + w[1]) * (w[1] - w[0])).sum();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.5).abs() < 1e-8);
    }

    #[test]
    fn missing_jump_knot_is_an_error() {
        let g = unit();
        let w = ParetoWeight::cdf_from(0.33);
        let x = grid(10);
        assert!(matches!(stieltjes(&x, &x, &w, &g), Err(Error::MissingJumpKnot(_))));
    }

    #[test]
    fn validation_catches_weight_above_cdf() {
        let g = unit();
        let w = ParetoWeight::knots(vec![(0.0, 0.1), (1.0, 1.0)]).unwrap();
        assert!(w.validate(&g).is_err());
        let ok = ParetoWeight::knots(vec![(0.0, 0.0), (0.5, 0.0), (0.5, 0.5), (1.0, 1.0)]).unwrap();
        ok.validate(&g).unwrap();
        assert_eq!(ok.jump_knots(&g), vec![0.5]);
        assert_eq!(ok.value(&g, 0.5), 0.5);
        assert_eq!(ok.left_limit(&g, 0.5), 0.0);
        ParetoWeight::cdf_from(0.5).validate(&TypeDistribution::power(0.0, 2.0, 3.0).unwrap()).unwrap();
    }
}
