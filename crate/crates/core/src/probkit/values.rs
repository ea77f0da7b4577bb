//! Consumer value models `F` on `[0, v_max]^N` and the surplus kernels built on them.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::dist::TypeDistribution;
use super::integrate::{self, Estimate, Integrator, Method, DEFAULT_NODES};
use crate::error::{Error, Result};

/// Largest tensor-quadrature node count `expect` will enumerate.
const MAX_TENSOR_POINTS: usize = 1 << 26;

/// Probability that a firm serves a consumer and the expected value it delivers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WinStats {
    /// `∫ μ_i dF`.
    pub prob: f64,
    /// `∫ v_i μ_i dF`.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
enum Mode {
    Independent(Vec<TypeDistribution>),
    /// `v_1 = … = v_N`.
    Comonotone { n: usize, marginal: TypeDistribution },
    /// `N = 2`, `v_2 = v_max - v_1`.
    Antithetic { marginal: TypeDistribution },
    Sampler(Sampler),
}

#[derive(Clone, Debug, PartialEq)]
struct Sampler {
    n: usize,
    marginal: TypeDistribution,
    correlation: f64,
    draws: usize,
    seed: u64,
    /// Row-major `draws × n` table of pre-generated values.
    table: Vec<f64>,
}

impl Sampler {
    fn row(&self, m: usize) -> &[f64] {
        &self.table[m * self.n..(m + 1) * self.n]
    }
}

fn gaussian_copula_draw<R: Rng>(
    rng: &mut R,
    n: usize,
    marginal: &TypeDistribution,
    rho: f64,
) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let common: f64 = rng.sample(StandardNormal);
    (0..n)
        .map(|_| {
            let own: f64 = rng.sample(StandardNormal);
            let z = rho.sqrt() * common + (1.0 - rho).sqrt() * own;
            marginal.quantile(normal.cdf(z))
        })
        .collect()
}

/// Joint distribution of consumer values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ValueSpec", into = "ValueSpec")]
pub struct ValueModel {
    mode: Mode,
    v_max: f64,
    line_nodes: usize,
}

/// Wire form of a [`ValueModel`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValueSpec {
    Independent {
        marginals: Vec<TypeDistribution>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        v_max: Option<f64>,
    },
    /// Independent with a common marginal.
    Iid {
        n: usize,
        marginal: TypeDistribution,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        v_max: Option<f64>,
    },
    Comonotone {
        n: usize,
        marginal: TypeDistribution,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        v_max: Option<f64>,
    },
    Antithetic {
        marginal: TypeDistribution,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        v_max: Option<f64>,
    },
    Sampler {
        n: usize,
        marginal: TypeDistribution,
        correlation: f64,
        draws: usize,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        v_max: Option<f64>,
    },
}

impl TryFrom<ValueSpec> for ValueModel {
    type Error = Error;

    fn try_from(spec: ValueSpec) -> Result<Self> {
        let (model, v_max) = match spec {
            ValueSpec::Independent { marginals, v_max } => (Self::independent(marginals)?, v_max),
            ValueSpec::Iid { n, marginal, v_max } => (Self::iid(n, marginal)?, v_max),
            ValueSpec::Comonotone { n, marginal, v_max } => (Self::comonotone(n, marginal)?, v_max),
            ValueSpec::Antithetic { marginal, v_max } => (Self::antithetic(marginal), v_max),
            ValueSpec::Sampler { n, marginal, correlation, draws, seed, v_max } => {
                (Self::sampler(n, marginal, correlation, draws, seed)?, v_max)
            }
        };
        match v_max {
            Some(v) => model.with_v_max(v),
            None => Ok(model),
        }
    }
}

impl From<ValueModel> for ValueSpec {
    fn from(m: ValueModel) -> Self {
        let v_max = Some(m.v_max);
        match m.mode {
            Mode::Independent(marginals) => ValueSpec::Independent { marginals, v_max },
            Mode::Comonotone { n, marginal } => ValueSpec::Comonotone { n, marginal, v_max },
            Mode::Antithetic { marginal } => ValueSpec::Antithetic { marginal, v_max },
            Mode::Sampler(s) => ValueSpec::Sampler {
                n: s.n,
                marginal: s.marginal,
                correlation: s.correlation,
                draws: s.draws,
                seed: s.seed,
                v_max,
            },
        }
    }
}

fn check_dimension(n: usize) -> Result<()> {
    if n == 0 || n > 16 {
        return Err(Error::InvalidValueModel(format!("dimension {n} outside 1..=16")));
    }
    Ok(())
}

impl ValueModel {
    fn build(mode: Mode, v_max: f64) -> Self {
        Self { mode, v_max, line_nodes: DEFAULT_NODES }
    }

    pub fn independent(marginals: Vec<TypeDistribution>) -> Result<Self> {
        check_dimension(marginals.len())?;
        let v_max = marginals.iter().map(|d| d.upper()).fold(0.0, f64::max);
        Ok(Self::build(Mode::Independent(marginals), v_max))
    }

    pub fn iid(n: usize, marginal: TypeDistribution) -> Result<Self> {
        Self::independent(vec![marginal; n])
    }

    pub fn comonotone(n: usize, marginal: TypeDistribution) -> Result<Self> {
        check_dimension(n)?;
        let v_max = marginal.upper();
        Ok(Self::build(Mode::Comonotone { n, marginal }, v_max))
    }

    pub fn antithetic(marginal: TypeDistribution) -> Self {
        let v_max = marginal.upper();
        Self::build(Mode::Antithetic { marginal }, v_max)
    }

    /// Equicorrelated Gaussian copula with a common marginal; `draws` value
    /// vectors are generated once from `seed` and reused by every kernel.
    pub fn sampler(
        n: usize,
        marginal: TypeDistribution,
        correlation: f64,
        draws: usize,
        seed: u64,
    ) -> Result<Self> {
        check_dimension(n)?;
        if !(0.0..1.0).contains(&correlation) {
            return Err(Error::InvalidValueModel(format!(
                "copula correlation {correlation} outside [0, 1)"
            )));
        }
        if draws == 0 {
            return Err(Error::InvalidValueModel("sampler needs at least one draw".into()));
        }
        let rows = integrate::par_generate(draws, seed, |rng| {
            gaussian_copula_draw(rng, n, &marginal, correlation)
        });
        let table = rows.into_iter().flatten().collect();
        let v_max = marginal.upper();
        let sampler = Sampler { n, marginal, correlation, draws, seed, table };
        Ok(Self::build(Mode::Sampler(sampler), v_max))
    }

    /// Raises the support bound; it may not cut into any marginal's support.
    pub fn with_v_max(mut self, v_max: f64) -> Result<Self> {
        let needed = self.natural_v_max();
        if !(v_max.is_finite() && v_max >= needed) {
            return Err(Error::InvalidValueModel(format!(
                "v_max {v_max} is below the largest marginal upper bound {needed}"
            )));
        }
        self.v_max = v_max;
        Ok(self)
    }

    /// Number of cells used by the one-dimensional surplus kernels.
    pub fn with_line_nodes(mut self, nodes: usize) -> Self {
        self.line_nodes = nodes.max(1);
        self
    }

    fn natural_v_max(&self) -> f64 {
        match &self.mode {
            Mode::Independent(m) => m.iter().map(|d| d.upper()).fold(0.0, f64::max),
            Mode::Comonotone { marginal, .. } | Mode::Antithetic { marginal } => marginal.upper(),
            Mode::Sampler(s) => s.marginal.upper(),
        }
    }

    pub fn dimension(&self) -> usize {
        match &self.mode {
            Mode::Independent(m) => m.len(),
            Mode::Comonotone { n, .. } => *n,
            Mode::Antithetic { .. } => 2,
            Mode::Sampler(s) => s.n,
        }
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn line_nodes(&self) -> usize {
        self.line_nodes
    }

    /// True for the modes without a closed-form joint law.
    pub fn is_sampled(&self) -> bool {
        matches!(self.mode, Mode::Sampler(_))
    }

    /// True when the marginals are identical and the law is exchangeable.
    pub fn is_symmetric(&self) -> bool {
        match &self.mode {
            Mode::Independent(m) => m.windows(2).all(|w| w[0] == w[1]),
            Mode::Comonotone { .. } | Mode::Sampler(_) => true,
            Mode::Antithetic { marginal } => {
                // v and v_max - v share a law only for reflection-symmetric marginals
                let probe = (0..=64).map(|k| marginal.lower() + (marginal.upper() - marginal.lower()) * k as f64 / 64.0);
                probe.into_iter().all(|v| {
                    (marginal.cdf(v) - (1.0 - marginal.cdf(self.v_max - v))).abs() < 1e-12
                })
            }
        }
    }

    /// Marginal law of `v_i`.
    pub fn marginal(&self, i: usize) -> Marginal<'_> {
        match &self.mode {
            Mode::Independent(m) => Marginal::Plain(&m[i]),
            Mode::Comonotone { marginal, .. } => Marginal::Plain(marginal),
            Mode::Sampler(s) => Marginal::Plain(&s.marginal),
            Mode::Antithetic { marginal } if i == 0 => Marginal::Plain(marginal),
            Mode::Antithetic { marginal } => Marginal::Reflected(marginal, self.v_max),
        }
    }

    /// Draws one value vector.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match &self.mode {
            Mode::Independent(m) => m.iter().map(|d| d.quantile(rng.gen())).collect(),
            Mode::Comonotone { n, marginal } => vec![marginal.quantile(rng.gen()); *n],
            Mode::Antithetic { marginal } => {
                let v = marginal.quantile(rng.gen());
                vec![v, self.v_max - v]
            }
            Mode::Sampler(s) => gaussian_copula_draw(rng, s.n, &s.marginal, s.correlation),
        }
    }

    /// `∫ f dF`.
    ///
    /// Quadrature enumerates midpoint nodes in quantile coordinates: a full
    /// tensor grid for independent values and a single line for the two
    /// degenerate modes. Sampled values and oversized tensor grids ask for a
    /// Monte Carlo integrator instead.
    pub fn expect<F>(&self, f: F, integrator: &Integrator) -> Result<Estimate>
    where
        F: Fn(&[f64]) -> f64 + Sync + Send,
    {
        match integrator.method {
            Method::Quadrature { nodes } => self.expect_quadrature(&f, nodes),
            Method::MonteCarlo { draws, seed } => {
                let values = integrate::par_generate(draws, seed, |rng| f(&self.sample(rng)));
                Ok(Estimate::from_samples(&values))
            }
        }
    }

    fn expect_quadrature<F>(&self, f: &F, nodes: usize) -> Result<Estimate>
    where
        F: Fn(&[f64]) -> f64 + Sync + Send,
    {
        let n = nodes.max(1);
        match &self.mode {
            Mode::Sampler(_) => Err(Error::NeedsMonteCarlo {
                reason: "sampled value models have no quadrature rule".into(),
            }),
            Mode::Comonotone { n: dim, marginal } => {
                let pts = marginal.midpoint_nodes(n);
                let total = integrate::ordered_sum(n, |k| f(&vec![pts[k]; *dim]));
                Ok(Estimate::exact(total / n as f64))
            }
            Mode::Antithetic { marginal } => {
                let pts = marginal.midpoint_nodes(n);
                let total = integrate::ordered_sum(n, |k| f(&[pts[k], self.v_max - pts[k]]));
                Ok(Estimate::exact(total / n as f64))
            }
            Mode::Independent(marginals) => {
                let dim = marginals.len();
                let points = (0..dim).try_fold(1usize, |acc, _| acc.checked_mul(n));
                match points {
                    Some(p) if p <= MAX_TENSOR_POINTS => {}
                    _ => {
                        return Err(Error::NeedsMonteCarlo {
                            reason: format!("tensor grid of {n}^{dim} nodes is too large"),
                        })
                    }
                }
                let axes: Vec<Vec<f64>> = marginals.iter().map(|d| d.midpoint_nodes(n)).collect();
                let inner = n.pow(dim as u32 - 1);
                let total = integrate::ordered_sum(n, |first| {
                    let mut v = vec![0.0; dim];
                    v[0] = axes[0][first];
                    let mut acc = 0.0;
                    for flat in 0..inner {
                        let mut rest = flat;
                        for (axis, slot) in v.iter_mut().enumerate().skip(1) {
                            *slot = axes[axis][rest % n];
                            rest /= n;
                        }
                        acc += f(&v);
                    }
                    acc
                });
                Ok(Estimate::exact(total / points.unwrap_or(1) as f64))
            }
        }
    }

    fn line_step(&self) -> f64 {
        self.v_max / self.line_nodes as f64
    }

    /// `E[max_{i∈E}(v_i - x_i)^+]` for every subset `E`, indexed by bitmask.
    ///
    /// Independent values use the tail identity
    /// `∫_0^{v_max} (1 - Π_{i∈E} F_i(x_i + t)) dt` on a fixed midpoint grid in
    /// `t`, with all subset products built in one pass per node.
    pub fn subset_surpluses(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dimension();
        assert_eq!(x.len(), n, "offset vector has the wrong length");
        let size = 1usize << n;
        match &self.mode {
            Mode::Independent(marginals) => {
                let h = self.line_step();
                let reach = marginals
                    .iter()
                    .zip(x)
                    .map(|(d, &xi)| d.upper() - xi)
                    .fold(0.0, f64::max);
                let mut acc = vec![0.0; size];
                let mut prod = vec![1.0; size];
                let mut cdf = vec![0.0; n];
                for k in 0..self.line_nodes {
                    let t = (k as f64 + 0.5) * h;
                    if t >= reach {
                        break;
                    }
                    for (c, (d, &xi)) in cdf.iter_mut().zip(marginals.iter().zip(x)) {
                        *c = d.cdf(xi + t);
                    }
                    for mask in 1..size {
                        let low = mask.trailing_zeros() as usize;
                        prod[mask] = prod[mask & (mask - 1)] * cdf[low];
                        acc[mask] += 1.0 - prod[mask];
                    }
                }
                acc.iter().map(|a| a * h).collect()
            }
            _ => (0..size).map(|mask| self.max_surplus_closed(x, mask as u32)).collect(),
        }
    }

    /// `E[max_{i∈E}(v_i - x_i)^+]` for one subset.
    pub fn expect_max_surplus(&self, x: &[f64], subset: u32) -> f64 {
        if subset == 0 {
            return 0.0;
        }
        match &self.mode {
            Mode::Independent(marginals) => {
                let members: Vec<usize> = bits(subset).collect();
                let h = self.line_step();
                let mut acc = 0.0;
                for k in 0..self.line_nodes {
                    let t = (k as f64 + 0.5) * h;
                    let p: f64 = members.iter().map(|&i| marginals[i].cdf(x[i] + t)).product();
                    acc += 1.0 - p;
                }
                acc * h
            }
            _ => self.max_surplus_closed(x, subset),
        }
    }

    fn max_surplus_closed(&self, x: &[f64], subset: u32) -> f64 {
        if subset == 0 {
            return 0.0;
        }
        match &self.mode {
            Mode::Independent(_) => self.expect_max_surplus(x, subset),
            Mode::Comonotone { marginal, .. } => {
                let m = bits(subset).map(|i| x[i]).fold(f64::INFINITY, f64::min);
                marginal.partial_mean(m, f64::INFINITY) - m * marginal.survival(m)
            }
            Mode::Antithetic { marginal } => {
                let w = self.antithetic_wins(marginal, x, subset);
                w[0].value - x[0] * w[0].prob + w[1].value - x[1] * w[1].prob
            }
            Mode::Sampler(s) => {
                let total: f64 = (0..s.draws)
                    .map(|m| {
                        let v = s.row(m);
                        bits(subset).map(|i| v[i] - x[i]).fold(0.0, f64::max)
                    })
                    .sum();
                total / s.draws as f64
            }
        }
    }

    /// Per-firm service probability and delivered value when consumers buy
    /// the best nonnegative surplus `v_i - x_i` among `subset`, splitting ties
    /// equally. Entries outside `subset` are zero.
    pub fn win_stats(&self, x: &[f64], subset: u32) -> Vec<WinStats> {
        let n = self.dimension();
        let mut out = vec![WinStats::default(); n];
        if subset == 0 {
            return out;
        }
        match &self.mode {
            Mode::Independent(marginals) => {
                let members: Vec<usize> = bits(subset).collect();
                if let [i] = members[..] {
                    let d = &marginals[i];
                    out[i] = WinStats {
                        prob: d.survival(x[i]),
                        value: d.partial_mean(x[i], f64::INFINITY),
                    };
                    return out;
                }
                let h = self.line_step();
                for &i in &members {
                    let d = &marginals[i];
                    let mut stats = WinStats::default();
                    for k in 0..self.line_nodes {
                        let right = (k as f64 + 1.0) * h;
                        if right <= x[i] {
                            continue;
                        }
                        let left = (k as f64 * h).max(x[i]);
                        let mass = d.cdf(right) - d.cdf(left);
                        if mass <= 0.0 {
                            continue;
                        }
                        let mid = 0.5 * (left + right);
                        let others: f64 = members
                            .iter()
                            .filter(|&&j| j != i)
                            .map(|&j| marginals[j].cdf(mid - x[i] + x[j]))
                            .product();
                        stats.prob += mass * others;
                        stats.value += d.partial_mean(left, right) * others;
                    }
                    out[i] = stats;
                }
            }
            Mode::Comonotone { marginal, .. } => {
                let m = bits(subset).map(|i| x[i]).fold(f64::INFINITY, f64::min);
                let winners: Vec<usize> = bits(subset).filter(|&i| x[i] == m).collect();
                let share = 1.0 / winners.len() as f64;
                let prob = marginal.survival(m) * share;
                let value = marginal.partial_mean(m, f64::INFINITY) * share;
                for i in winners {
                    out[i] = WinStats { prob, value };
                }
            }
            Mode::Antithetic { marginal } => {
                let w = self.antithetic_wins(marginal, x, subset);
                out[0] = w[0];
                out[1] = w[1];
            }
            Mode::Sampler(s) => {
                let mut best = Vec::with_capacity(n);
                for m in 0..s.draws {
                    let v = s.row(m);
                    let top = bits(subset).map(|i| v[i] - x[i]).fold(f64::NEG_INFINITY, f64::max);
                    if top < 0.0 {
                        continue;
                    }
                    best.clear();
                    best.extend(bits(subset).filter(|&i| v[i] - x[i] == top));
                    let share = 1.0 / best.len() as f64;
                    for &i in &best {
                        out[i].prob += share;
                        out[i].value += share * v[i];
                    }
                }
                for w in &mut out {
                    w.prob /= s.draws as f64;
                    w.value /= s.draws as f64;
                }
            }
        }
        out
    }

    /// Closed forms for `v = (u, v_max - u)`.
    fn antithetic_wins(&self, d: &TypeDistribution, x: &[f64], subset: u32) -> [WinStats; 2] {
        let top = self.v_max;
        // firm 2 serves u ≤ b, firm 1 serves u ≥ a
        let (a, b) = match subset {
            0b01 => (x[0], f64::NEG_INFINITY),
            0b10 => (f64::INFINITY, top - x[1]),
            _ => {
                let c = 0.5 * (top + x[0] - x[1]);
                (c.max(x[0]), c.min(top - x[1]))
            }
        };
        let first = if a.is_finite() {
            WinStats { prob: d.survival(a), value: d.partial_mean(a, f64::INFINITY) }
        } else {
            WinStats::default()
        };
        let second = if b.is_finite() && b > d.lower() {
            let p = d.cdf(b);
            WinStats { prob: p, value: top * p - d.partial_mean(f64::NEG_INFINITY, b) }
        } else {
            WinStats::default()
        };
        [first, second]
    }

    /// `P(v_i ≥ p for every i in subset)`.
    pub fn joint_survival(&self, p: f64, subset: u32) -> f64 {
        match &self.mode {
            Mode::Independent(m) => bits(subset).map(|i| m[i].survival(p)).product(),
            Mode::Comonotone { marginal, .. } => marginal.survival(p),
            Mode::Antithetic { marginal } => match subset {
                0 => 1.0,
                0b01 => marginal.survival(p),
                0b10 => marginal.cdf(self.v_max - p),
                _ => (marginal.cdf(self.v_max - p) - marginal.cdf(p)).max(0.0),
            },
            Mode::Sampler(s) => {
                let hits = (0..s.draws)
                    .filter(|&m| bits(subset).all(|i| s.row(m)[i] >= p))
                    .count();
                hits as f64 / s.draws as f64
            }
        }
    }

    /// `E[v_i · 1{v_j ≥ p for every j in subset ∪ {i}}]`.
    pub fn joint_survival_mean(&self, i: usize, p: f64, subset: u32) -> f64 {
        match &self.mode {
            Mode::Independent(m) => {
                let own = m[i].partial_mean(p, f64::INFINITY);
                // the own coordinate is always constrained
                let rest: f64 =
                    bits(subset).filter(|&j| j != i).map(|j| m[j].survival(p)).product();
                own * rest
            }
            Mode::Comonotone { marginal, .. } => marginal.partial_mean(p, f64::INFINITY),
            Mode::Antithetic { marginal } => {
                let lo = if subset & 1 != 0 || i == 0 { p } else { f64::NEG_INFINITY };
                let hi = if subset & 2 != 0 || i == 1 { self.v_max - p } else { f64::INFINITY };
                if hi <= lo {
                    return 0.0;
                }
                let mean = marginal.partial_mean(lo, hi);
                if i == 0 {
                    mean
                } else {
                    let mass = marginal.cdf(hi) - marginal.cdf(lo);
                    self.v_max * mass - mean
                }
            }
            Mode::Sampler(s) => {
                let total: f64 = (0..s.draws)
                    .map(|m| s.row(m))
                    .filter(|v| bits(subset).all(|j| v[j] >= p) && v[i] >= p)
                    .map(|v| v[i])
                    .sum();
                total / s.draws as f64
            }
        }
    }

    /// Parallel map of `subset_surpluses` over many offset vectors.
    pub fn subset_surpluses_many(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        xs.par_iter().map(|x| self.subset_surpluses(x)).collect()
    }
}

/// Marginal law of one coordinate of a value model.
#[derive(Clone, Copy, Debug)]
pub enum Marginal<'a> {
    Plain(&'a TypeDistribution),
    /// Law of `v_max - u` for `u` drawn from the inner distribution.
    Reflected(&'a TypeDistribution, f64),
}

impl Marginal<'_> {
    pub fn survival(&self, p: f64) -> f64 {
        match *self {
            Marginal::Plain(d) => d.survival(p),
            Marginal::Reflected(d, top) => d.cdf(top - p),
        }
    }

    /// `E[v · 1{v ≥ p}]`.
    pub fn upper_mean(&self, p: f64) -> f64 {
        match *self {
            Marginal::Plain(d) => d.partial_mean(p, f64::INFINITY),
            Marginal::Reflected(d, top) => {
                let b = top - p;
                top * d.cdf(b) - d.partial_mean(f64::NEG_INFINITY, b)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.upper_mean(f64::NEG_INFINITY)
    }
}

/// Indices of the set bits of `mask`, lowest first.
pub fn bits(mask: u32) -> impl Iterator<Item = usize> + Clone {
    (0..32).filter(move |i| mask & (1 << i) != 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn unit() -> TypeDistribution {
        TypeDistribution::uniform(0.0, 1.0).unwrap()
    }

    /// Midpoint-rule brute force over `[0,1]^2` with `cells²` cells.
    fn grid_oracle(cells: usize, f: impl Fn(f64, f64) -> f64) -> f64 {
        let h = 1.0 / cells as f64;
        let mut total = 0.0;
        for a in 0..cells {
            let v1 = (a as f64 + 0.5) * h;
            let mut row = 0.0;
            for b in 0..cells {
                row += f(v1, (b as f64 + 0.5) * h);
            }
            total += row;
        }
        total * h * h
    }

    #[test]
    fn expect_max_of_two_uniforms() {
        let model = ValueModel::iid(2, unit()).unwrap();
        let oracle = grid_oracle(4000, f64::max);
        assert!((oracle - 2.0 / 3.0).abs() < 1e-6);
        let got = model.expect(|v| v[0].max(v[1]), &Integrator::quadrature(4096)).unwrap();
        assert!((got.value - oracle).abs() < 1e-6);
        assert_eq!(got.std_err, 0.0);
    }

    #[test]
    fn zero_integrand_is_zero_everywhere() {
        let u = unit();
        let models = [
            ValueModel::iid(3, u.clone()).unwrap(),
            ValueModel::comonotone(2, u.clone()).unwrap(),
            ValueModel::antithetic(u.clone()),
            ValueModel::sampler(2, u, 0.5, 100, 1).unwrap(),
        ];
        for m in &models {
            let mc = m.expect(|_| 0.0, &Integrator::monte_carlo(500, 3)).unwrap();
            assert_eq!(mc.value, 0.0);
            if let Ok(q) = m.expect(|_| 0.0, &Integrator::quadrature(64)) {
                assert_eq!(q.value, 0.0);
            }
        }
    }

    #[test]
    fn comonotone_reduces_to_one_dimension() {
        let model = ValueModel::comonotone(2, unit()).unwrap();
        let got = model.expect(|v| (v[0] - 0.5).max(0.0), &Integrator::quadrature(4096)).unwrap();
        assert!((got.value - 0.125).abs() < 1e-8);
        let line: f64 = (0..100_000).map(|k| ((k as f64 + 0.5) / 1e5 - 0.5).max(0.0)).sum::<f64>() / 1e5;
        assert!((line - 0.125).abs() < 1e-8);
        assert!((model.expect_max_surplus(&[0.5, 0.9], 0b11) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn degenerate_modes_hold_their_constraints() {
        let model = ValueModel::antithetic(unit());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let v = model.sample(&mut rng);
            assert!((v[0] + v[1] - 1.0).abs() < 1e-15);
        }
        let co = ValueModel::comonotone(3, unit()).unwrap();
        let v = co.sample(&mut rng);
        assert!(v[0] == v[1] && v[1] == v[2]);
    }

    #[test]
    fn sampler_needs_monte_carlo_and_big_tensors_too() {
        let s = ValueModel::sampler(2, unit(), 0.3, 100, 1).unwrap();
        assert!(matches!(s.expect(|_| 1.0, &Integrator::quadrature(16)), Err(Error::NeedsMonteCarlo { .. })));
        let big = ValueModel::iid(3, unit()).unwrap();
        assert!(matches!(
            big.expect(|_| 1.0, &Integrator::quadrature(4096)),
            Err(Error::NeedsMonteCarlo { .. })
        ));
        let one = big.expect(|_| 1.0, &Integrator::monte_carlo(1000, 2)).unwrap();
        assert_eq!(one.value, 1.0);
    }

    #[test]
    fn max_surplus_examples() {
        let model = ValueModel::iid(2, unit()).unwrap();
        let all = model.subset_surpluses(&[0.0, 0.0]);
        assert_eq!(all[0], 0.0);
        assert!((all[3] - 2.0 / 3.0).abs() < 1e-6);
        assert_eq!(model.expect_max_surplus(&[0.3, 0.3], 0), 0.0);
        let single = model.subset_surpluses(&[0.5, 0.77]);
        assert!((single[1] - 0.125).abs() < 1e-8);
        assert!((model.expect_max_surplus(&[0.5, 0.77], 1) - single[1]).abs() < 1e-15);
    }

    #[test]
    fn win_stats_against_closed_forms() {
        let model = ValueModel::iid(2, unit()).unwrap();
        let w = model.win_stats(&[0.0, 0.0], 0b11);
        assert!((w[0].prob - 0.5).abs() < 1e-9);
        // firm 1 serves v1 ≥ max(v2, ...) : E[v1 1{v1≥v2}] = 1/3
        assert!((w[0].value - 1.0 / 3.0).abs() < 1e-6);
        let x = [0.2, 0.3];
        let w = model.win_stats(&x, 0b11);
        let oracle = grid_oracle(2000, |a, b| {
            if a - x[0] >= (b - x[1]).max(0.0) { 1.0 } else { 0.0 }
        });
        assert!((w[0].prob - oracle).abs() < 2e-4, "{} vs {oracle}", w[0].prob);
        // consistency: E[max surplus] = Σ (value - x·prob)
        let s = model.subset_surpluses(&x)[3];
        let via = w[0].value - x[0] * w[0].prob + w[1].value - x[1] * w[1].prob;
        assert!((s - via).abs() < 1e-5);
    }

    #[test]
    fn antithetic_and_comonotone_consistency() {
        for model in [ValueModel::antithetic(unit()), ValueModel::comonotone(2, unit()).unwrap()] {
            for x in [[0.1, 0.4], [0.5, 0.2], [0.3, 0.3], [0.9, 0.0]] {
                for mask in 1..4u32 {
                    let w = model.win_stats(&x, mask);
                    let direct = model
                        .expect(
                            |v| bits(mask).map(|i| v[i] - x[i]).fold(0.0, f64::max),
                            &Integrator::quadrature(20_000),
                        )
                        .unwrap()
                        .value;
                    let via: f64 = (0..2).map(|i| w[i].value - x[i] * w[i].prob).sum();
                    assert!((direct - via).abs() < 1e-6, "{x:?} {mask}: {direct} vs {via}");
                    assert!((model.expect_max_surplus(&x, mask) - direct).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn joint_survival_forms() {
        let model = ValueModel::iid(2, unit()).unwrap();
        assert!((model.joint_survival(0.4, 0b11) - 0.36).abs() < 1e-15);
        let anti = ValueModel::antithetic(unit());
        assert!((anti.joint_survival(0.3, 0b11) - 0.4).abs() < 1e-12);
        let m = anti.joint_survival_mean(1, 0.3, 0b11);
        let oracle = anti
            .expect(|v| if v[0] >= 0.3 && v[1] >= 0.3 { v[1] } else { 0.0 }, &Integrator::quadrature(100_000))
            .unwrap()
            .value;
        assert!((m - oracle).abs() < 1e-5);
    }

    #[test]
    fn sampler_is_reproducible_and_roughly_calibrated() {
        let a = ValueModel::sampler(3, unit(), 0.5, 20_000, 9).unwrap();
        let b = ValueModel::sampler(3, unit(), 0.5, 20_000, 9).unwrap();
        assert_eq!(a, b);
        let w = a.win_stats(&[0.0, 0.0, 0.0], 0b111);
        let total: f64 = w.iter().map(|s| s.prob).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((w[0].prob - 1.0 / 3.0).abs() < 0.02);
    }

    #[test]
    fn json_forms() {
        let m: ValueModel = serde_json::from_str(
            r#"{"mode":"iid","n":2,"marginal":{"family":"uniform","lower":0,"upper":1}}"#,
        )
        .unwrap();
        assert_eq!(m.dimension(), 2);
        assert_eq!(m.v_max(), 1.0);
        let back: ValueModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back.v_max(), 1.0);
        let bad = serde_json::from_str::<ValueModel>(
            r#"{"mode":"comonotone","n":2,"marginal":{"family":"uniform","lower":0,"upper":1},"v_max":0.5}"#,
        );
        assert!(bad.is_err());
    }
}
