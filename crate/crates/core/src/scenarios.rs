//! Named instances and seeded random instance batteries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::instance::{Firm, MarketInstance};
use crate::probkit::{ParetoWeight, TypeDistribution, ValueModel};

/// Value-line nodes used by battery instances; enough for 1e-6 closed-form
/// agreement on the smooth families drawn here.
pub const BATTERY_LINE_NODES: usize = 1024;

fn unit() -> TypeDistribution {
    TypeDistribution::uniform(0.0, 1.0).expect("unit interval")
}

/// Two firms, iid uniform values and types on `[0, 1]`, common `κ`, `Λ = G`.
pub fn uniform_duopoly(kappa: f64) -> MarketInstance {
    let firm = Firm { dist: unit(), weight: ParetoWeight::full(), kappa };
    MarketInstance::new(vec![firm.clone(), firm], ValueModel::iid(2, unit()).expect("iid"))
        .expect("valid duopoly")
}

/// The two-firm worked example with `κ = 1`.
pub fn figure_instance() -> MarketInstance {
    uniform_duopoly(1.0)
}

/// One firm on uniform types and values.
pub fn uniform_monopoly(kappa: f64, weight: ParetoWeight) -> MarketInstance {
    MarketInstance::new(
        vec![Firm { dist: unit(), weight, kappa }],
        ValueModel::iid(1, unit()).expect("iid"),
    )
    .expect("valid monopoly")
}

/// `N` symmetric firms on uniform types and values.
pub fn symmetric(n: usize, kappa: f64) -> MarketInstance {
    let firm = Firm { dist: unit(), weight: ParetoWeight::full(), kappa };
    MarketInstance::new(
        vec![firm; n],
        ValueModel::iid(n, unit()).expect("iid").with_line_nodes(BATTERY_LINE_NODES),
    )
    .expect("valid symmetric instance")
}

fn random_dist(rng: &mut ChaCha8Rng, lower: f64, upper: f64) -> TypeDistribution {
    if rng.gen_bool(0.5) {
        TypeDistribution::uniform(lower, upper).expect("ordered support")
    } else {
        let exponent = rng.gen_range(0.6..2.5);
        TypeDistribution::power(lower, upper, exponent).expect("ordered support")
    }
}

fn random_weight(rng: &mut ChaCha8Rng, lower: f64, upper: f64) -> ParetoWeight {
    match rng.gen_range(0..5) {
        0 => ParetoWeight::full(),
        1 => ParetoWeight::zero(),
        2 => ParetoWeight::scaled(rng.gen_range(0.1..0.9)).expect("alpha in range"),
        3 => ParetoWeight::cdf_from(lower + rng.gen_range(0.2..0.8) * (upper - lower)),
        _ => {
            let mid = lower + rng.gen_range(0.2..0.8) * (upper - lower);
            let a0 = rng.gen_range(0.0..0.5);
            let a1 = rng.gen_range(a0..1.0);
            ParetoWeight::cdf_share(vec![(lower, a0), (mid, a1), (upper, 1.0)]).expect("valid share")
        }
    }
}

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> ValueModel {
    let model = if rng.gen_bool(0.5) {
        ValueModel::iid(n, random_dist(rng, 0.0, 1.0))
    } else {
        ValueModel::independent((0..n).map(|_| {
            let upper = rng.gen_range(0.7..1.3);
            random_dist(rng, 0.0, upper)
        }).collect())
    };
    model.expect("valid value model").with_line_nodes(BATTERY_LINE_NODES)
}

/// Parameters of [`random_instance`].
#[derive(Clone, Copy, Debug)]
pub struct RandomSpec {
    pub firms: usize,
    /// Draw Pareto weights from the mixed family; otherwise `Λ = G`.
    pub mixed_weights: bool,
}

/// A random instance: uniform or power types on `[0, u]` with
/// `u ∈ [0.4, 1]`, independent values, `κ ∈ [0, 1.5]`.
pub fn random_instance(spec: RandomSpec, seed: u64) -> MarketInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let firms = (0..spec.firms)
        .map(|_| {
            let upper = rng.gen_range(0.4..1.0);
            let dist = random_dist(&mut rng, 0.0, upper);
            let weight = if spec.mixed_weights {
                random_weight(&mut rng, 0.0, upper)
            } else {
                ParetoWeight::full()
            };
            Firm { dist, weight, kappa: rng.gen_range(0.0..1.5) }
        })
        .collect();
    let values = random_values(&mut rng, spec.firms);
    MarketInstance::new(firms, values).expect("valid random instance")
}

/// `count` instances with `N` cycling through 1, 2, 3 and mixed weights.
pub fn battery(count: usize, seed: u64) -> Vec<MarketInstance> {
    (0..count)
        .map(|k| {
            let spec = RandomSpec { firms: 1 + k % 3, mixed_weights: true };
            random_instance(spec, seed.wrapping_mul(1_000_003).wrapping_add(k as u64))
        })
        .collect()
}

/// `count` instances with `Λ = G`, two or three firms.
pub fn full_weight_battery(count: usize, seed: u64) -> Vec<MarketInstance> {
    (0..count)
        .map(|k| {
            let spec = RandomSpec { firms: 2 + k % 2, mixed_weights: false };
            random_instance(spec, seed.wrapping_mul(7_919).wrapping_add(k as u64))
        })
        .collect()
}
