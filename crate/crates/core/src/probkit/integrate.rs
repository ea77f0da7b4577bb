//! Integration settings and the deterministic parallel reduction used by
//! every Monte Carlo loop in the crate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How expectations over the value model are computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    /// Midpoint tensor quadrature in quantile coordinates.
    Quadrature { nodes: usize },
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Integrator {
    #[serde(flatten)]
    pub method: Method,
    /// Root-finding tolerance for bisections driven by integrated quantities.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    1e-6
}

pub const DEFAULT_NODES: usize = 4096;
pub const DEFAULT_DRAWS: usize = 100_000;

impl Integrator {
    pub fn quadrature(nodes: usize) -> Self {
        Self { method: Method::Quadrature { nodes }, tolerance: default_tolerance() }
    }

    pub fn monte_carlo(draws: usize, seed: u64) -> Self {
        Self { method: Method::MonteCarlo { draws, seed }, tolerance: default_tolerance() }
    }

    /// Quadrature with 4,096 nodes per axis for up to two dimensions,
    /// otherwise 100,000 Monte Carlo draws.
    pub fn default_for(dimension: usize, correlated: bool, seed: u64) -> Self {
        if dimension <= 2 && !correlated {
            Self::quadrature(DEFAULT_NODES)
        } else {
            Self::monte_carlo(DEFAULT_DRAWS, seed)
        }
    }

    pub fn is_quadrature(&self) -> bool {
        matches!(self.method, Method::Quadrature { .. })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        if let Method::MonteCarlo { seed: s, .. } = &mut self.method {
            *s = seed;
        }
        self
    }
}

/// A point estimate with its Monte Carlo standard error (zero for quadrature).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, std_err: 0.0 }
    }

    /// Sample mean and standard error of the mean.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self::default();
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self::exact(mean);
        }
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self { value: mean, std_err: (var / n as f64).sqrt() }
    }

    /// True when `|a - b| ≤ k·√(se_a² + se_b²) + floor`.
    pub fn agrees(&self, other: &Estimate, k: f64, floor: f64) -> bool {
        (self.value - other.value).abs() <= k * self.std_err.hypot(other.std_err) + floor
    }
}

/// Number of draws handled by one seeded RNG stream.
pub const CHUNK: usize = 1024;

/// RNG for chunk `index` of the stream rooted at `seed`.
pub fn chunk_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Generates `count` items in parallel; item `k` is produced by the RNG of
/// chunk `k / CHUNK`, so the output never depends on the thread count.
pub fn par_generate<T, F>(count: usize, seed: u64, make: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> T + Sync + Send,
{
    let chunks = count.div_ceil(CHUNK);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let len = CHUNK.min(count - c * CHUNK);
            (0..len).map(|_| make(&mut rng)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

/// Sum of `f(k)` for `k < count`, evaluated in parallel and reduced in index
/// order.
pub fn ordered_sum<F>(count: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let parts: Vec<f64> = (0..count).into_par_iter().map(f).collect();
    parts.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn generation_is_reproducible() {
        let a = par_generate(5000, 7, |r| r.gen::<f64>());
        let b = par_generate(5000, 7, |r| r.gen::<f64>());
        assert_eq!(a, b);
        let c = par_generate(5000, 8, |r| r.gen::<f64>());
        assert_ne!(a, c);
    }

    #[test]
    fn estimate_statistics() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.value, 2.5);
        assert!((e.std_err - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(e.agrees(&Estimate::exact(3.0), 1.0, 0.0));
    }

    #[test]
    fn integrator_json() {
        let i: Integrator = serde_json::from_str(r#"{"method":"monte_carlo","draws":10,"seed":3}"#).unwrap();
        assert_eq!(i, Integrator::monte_carlo(10, 3));
        let q: Integrator = serde_json::from_str(r#"{"method":"quadrature","nodes":64,"tolerance":1e-8}"#).unwrap();
        assert_eq!(q.tolerance, 1e-8);
    }
}
