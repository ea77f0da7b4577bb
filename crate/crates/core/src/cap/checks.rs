//! Property checks on the cap functions.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::price_cap;
use crate::error::{Error, Result};
use crate::instance::{EntrantSet, MarketInstance};
use crate::mechanism::select_entrants;
use crate::probkit::integrate::par_generate;

/// Tolerance for comparing caps found by bisection.
const CAP_CMP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Largest price at which firm `i` alone is worth admitting:
/// `E[(v_i - s)^+] = s κ_i`. Equals `v_max` when `κ_i = 0`.
pub fn single_firm_root(inst: &MarketInstance, i: usize) -> f64 {
    let n = inst.n();
    let kappa = inst.firm(i).kappa;
    let alone = EntrantSet::EMPTY.with(i).0;
    let gain = |s: f64| {
        let mut x = vec![0.0; n];
        x[i] = s;
        inst.values().expect_max_surplus(&x, alone) - s * kappa
    };
    let (mut lo, mut hi) = (0.0, inst.v_max());
    if gain(hi) >= 0.0 {
        return hi;
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if gain(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub samples: usize,
    pub violations: usize,
    pub worst: f64,
}

/// Membership `i ∈ E^P(s)` against `s_i ≤ p̄_i(s_{-i})` on random `(s, i)`.
pub fn threshold_consistency(inst: &MarketInstance, samples: usize, seed: u64) -> ThresholdReport {
    let n = inst.n();
    let top = inst.v_max();
    let draws: Vec<(Vec<f64>, usize)> = par_generate(samples, seed, |rng| {
        let s: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * top).collect();
        (s, rng.gen_range(0..n))
    });
    let misses: Vec<f64> = draws
        .par_iter()
        .map(|(s, i)| {
            let cap = price_cap(inst, *i, s);
            let member = select_entrants(inst, s).contains(*i);
            if member {
                (s[*i] - cap).max(0.0)
            } else {
                (cap - s[*i]).max(0.0)
            }
        })
        .collect();
    let violations = misses.iter().filter(|&&m| m > CAP_CMP).count();
    ThresholdReport { samples, violations, worst: misses.into_iter().fold(0.0, f64::max) }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapShapeReport {
    pub samples: usize,
    /// Pairs where `s_i ≥ s_j` but `p̄_i > p̄_j`.
    pub ordering_violations: usize,
    /// Swapping two prices does not swap the two caps.
    pub symmetry_violations: usize,
    pub bounds: CapBounds,
    pub single_firm_root: f64,
    /// Samples with `s_i ≥ s̄` where firm `i` is still admitted.
    pub exclusion_violations: usize,
    /// Monotone pairs `s_{-i} ≤ s'_{-i}` with `p̄_i(s) > p̄_i(s')`.
    pub monotonicity_violations: usize,
    pub passed: bool,
}

/// Ordering, bounds and monotonicity of caps on a symmetric instance.
pub fn cap_shape_check(inst: &MarketInstance, samples: usize, seed: u64) -> Result<CapShapeReport> {
    let n = inst.n();
    if !inst.values().is_symmetric() {
        return Err(Error::Precondition("cap ordering needs exchangeable values".into()));
    }
    let kappa = inst.firm(0).kappa;
    if inst.firms().iter().any(|f| f.kappa != kappa) {
        return Err(Error::Precondition("cap ordering needs a common kappa".into()));
    }
    let top = inst.v_max();
    let draws: Vec<(Vec<f64>, Vec<f64>)> = par_generate(samples, seed, |rng| {
        let s: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * top).collect();
        let up: Vec<f64> = s.iter().map(|&x| x + rng.gen::<f64>() * (top - x)).collect();
        (s, up)
    });
    let root = single_firm_root(inst, 0);

    struct Row {
        caps: Vec<f64>,
        ordering: usize,
        symmetry: usize,
        exclusion: usize,
        monotone: usize,
    }
    let rows: Vec<Row> = draws
        .par_iter()
        .map(|(s, up)| {
            let caps: Vec<f64> = (0..n).map(|i| price_cap(inst, i, s)).collect();
            let mut ordering = 0;
            let mut symmetry = 0;
            for i in 0..n {
                for j in i + 1..n {
                    let ok = if s[i] >= s[j] {
                        caps[i] <= caps[j] + CAP_CMP
                    } else {
                        caps[j] <= caps[i] + CAP_CMP
                    };
                    ordering += usize::from(!ok);
                    let mut swapped = s.clone();
                    swapped.swap(i, j);
                    let mirrored = price_cap(inst, j, &swapped);
                    symmetry += usize::from((mirrored - caps[i]).abs() > CAP_CMP);
                }
            }
            let set = select_entrants(inst, s);
            let exclusion = (0..n).filter(|&i| s[i] >= root + CAP_CMP && set.contains(i)).count();
            let monotone = (0..n)
                .filter(|&i| {
                    let mut raised = up.clone();
                    raised[i] = s[i];
                    price_cap(inst, i, &raised) < caps[i] - CAP_CMP
                })
                .count();
            Row { caps, ordering, symmetry, exclusion, monotone }
        })
        .collect();

    let all_caps = rows.iter().flat_map(|r| r.caps.iter().copied());
    let (lower, upper) = all_caps.fold((f64::INFINITY, 0.0f64), |(lo, hi), c| (lo.min(c), hi.max(c)));
    let report = CapShapeReport {
        samples,
        ordering_violations: rows.iter().map(|r| r.ordering).sum(),
        symmetry_violations: rows.iter().map(|r| r.symmetry).sum(),
        bounds: CapBounds { lower, upper },
        single_firm_root: root,
        exclusion_violations: rows.iter().map(|r| r.exclusion).sum(),
        monotonicity_violations: rows.iter().map(|r| r.monotone).sum(),
        passed: false,
    };
    let passed = report.ordering_violations == 0
        && report.symmetry_violations == 0
        && report.exclusion_violations == 0
        && report.monotonicity_violations == 0
        && upper.is_finite()
        && lower >= 0.0
        && upper <= root + 1e-3;
    Ok(CapShapeReport { passed, ..report })
}
