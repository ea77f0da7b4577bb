use proptest::prelude::*;
use pryce::ironing::{iron, majorization_gap, StepFunction};
use pryce::probkit::{Integrator, ParetoWeight, TypeDistribution, ValueModel};

fn dist() -> impl Strategy<Value = TypeDistribution> {
    (0.0..0.3f64, 0.4..1.2f64, prop::option::of(0.5..3.0f64)).prop_map(|(lo, width, exp)| match exp {
        Some(c) => TypeDistribution::power(lo, lo + width, c).unwrap(),
        None => TypeDistribution::uniform(lo, lo + width).unwrap(),
    })
}

fn weight(lo: f64, hi: f64) -> impl Strategy<Value = ParetoWeight> {
    (0..5usize, 0.05..0.95f64, 0.0..1.0f64).prop_map(move |(kind, u, a)| match kind {
        0 => ParetoWeight::full(),
        1 => ParetoWeight::zero(),
        2 => ParetoWeight::scaled(a).unwrap(),
        3 => ParetoWeight::cdf_from(lo + u * (hi - lo)),
        _ => ParetoWeight::cdf_share(vec![(lo, 0.5 * a), (lo + u * (hi - lo), a), (hi, 1.0)]).unwrap(),
    })
}

fn dist_and_weight() -> impl Strategy<Value = (TypeDistribution, ParetoWeight)> {
    dist().prop_flat_map(|d| {
        let w = weight(d.lower(), d.upper());
        (Just(d), w)
    })
}

/// Nonincreasing step function with up to four breaks inside `[lo, hi]`.
fn step(lo: f64, hi: f64) -> impl Strategy<Value = StepFunction> {
    prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 0..4).prop_map(move |mut pts| {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| a.0 == b.0);
        let breaks: Vec<f64> = pts.iter().map(|p| lo + p.0 * (hi - lo)).collect();
        let mut drops: Vec<f64> = pts.iter().map(|p| p.1).collect();
        drops.push(1.0);
        // Levels from the right: cumulative sums of drops, read left to right.
        let mut levels: Vec<f64> = drops
            .iter()
            .rev()
            .scan(0.0, |acc, d| {
                *acc += d;
                Some(*acc)
            })
            .collect();
        levels.reverse();
        StepFunction::new(breaks, levels).unwrap()
    })
}

fn independent(n: usize) -> impl Strategy<Value = ValueModel> {
    prop::collection::vec(dist(), n).prop_map(|m| ValueModel::independent(m).unwrap().with_line_nodes(2048))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 50, ..ProptestConfig::default() })]

    #[test]
    fn tail_identity_matches_monte_carlo(
        (model, x) in (1..=3usize).prop_flat_map(|n| (independent(n), prop::collection::vec(0.0..0.8f64, n)))
    ) {
        let n = model.dimension();
        let surpluses = model.subset_surpluses(&x);
        let full = (1u32 << n) - 1;
        let mc = model
            .expect(
                |v| v.iter().zip(&x).map(|(a, b)| a - b).fold(0.0, f64::max),
                &Integrator::monte_carlo(40_000, 5),
            )
            .unwrap();
        let gap = (surpluses[full as usize] - mc.value).abs();
        prop_assert!(gap <= 4.0 * mc.std_err + 1e-4, "{} vs {:?}", surpluses[full as usize], mc);
    }

    #[test]
    fn max_surplus_is_monotone(
        (model, x, i, bump) in (2..=3usize).prop_flat_map(|n| (
            independent(n),
            prop::collection::vec(0.0..0.8f64, n),
            0..n,
            0.0..0.3f64,
        ))
    ) {
        let n = model.dimension();
        let base = model.subset_surpluses(&x);
        let mut raised = x.clone();
        raised[i] += bump;
        let after = model.subset_surpluses(&raised);
        for mask in 1..(1usize << n) {
            prop_assert!(after[mask] <= base[mask] + 1e-12);
            for j in 0..n {
                let sup = mask | (1 << j);
                prop_assert!(base[sup] >= base[mask] - 1e-12);
            }
        }
    }

    #[test]
    fn ironed_values_never_decrease((d, w) in dist_and_weight()) {
        let vc = iron(&d, &w, 4000).unwrap();
        prop_assert!(vc.values.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn pseudo_inverse_round_trips((d, w) in dist_and_weight(), u in 0.02..0.98f64) {
        let cells = 4000;
        let vc = iron(&d, &w, cells).unwrap();
        let theta = d.quantile(u);
        let inside_flat = vc.flats().iter().any(|f| theta >= f.from - 1e-9 && theta <= f.to + 1e-9);
        prop_assume!(!inside_flat);
        let back = vc.pseudo_inverse(vc.eval(theta));
        let cell = (d.upper() - d.lower()) / cells as f64;
        // Two cells in quantile terms, mapped back through the steepest part of G.
        let q_gap = (d.cdf(back) - d.cdf(theta)).abs();
        prop_assert!(q_gap <= 2.0 / cells as f64 + 1e-9 || (back - theta).abs() <= 2.0 * cell, "{theta} -> {back}");
    }

    #[test]
    fn majorization_holds(
        ((d, w), steps) in dist_and_weight().prop_flat_map(|(d, w)| {
            let (lo, hi) = (d.lower(), d.upper());
            (Just((d, w)), prop::collection::vec(step(lo, hi), 10))
        })
    ) {
        let vc = iron(&d, &w, 4000).unwrap();
        for q in &steps {
            let (lhs, rhs) = majorization_gap(&d, &w, &vc, q);
            prop_assert!(lhs >= rhs - 1e-6, "{lhs} < {rhs}");
        }
    }
}

#[test]
fn seeded_expectations_are_bit_reproducible() {
    let model = ValueModel::iid(3, TypeDistribution::power(0.0, 1.0, 1.7).unwrap()).unwrap();
    let f = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    let a = model.expect(f, &Integrator::monte_carlo(10_000, 42)).unwrap();
    let b = model.expect(f, &Integrator::monte_carlo(10_000, 42)).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(a.std_err.to_bits(), b.std_err.to_bits());
}
