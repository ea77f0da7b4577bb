use proptest::prelude::*;
use pryce::cap::threshold_consistency;
use pryce::ironing::iron;
use pryce::mechanism::{expected_quantity, select_entrants, TypeSample};
use pryce::probkit::Integrator;
use pryce::scenarios::{battery, random_instance, symmetric, RandomSpec};
use pryce::zoo::{Action, Canonical, MarketStructure};

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn lowering_own_cost_keeps_a_firm_selected(
        firms in 1..=3usize,
        seed in 0..10_000u64,
        raw in prop::collection::vec(0.0..1.2f64, 3),
        i in 0..3usize,
        cut in 0.0..1.0f64,
    ) {
        let inst = random_instance(RandomSpec { firms, mixed_weights: true }, seed % 64);
        let i = i % firms;
        let x: Vec<f64> = raw[..firms].to_vec();
        if select_entrants(&inst, &x).contains(i) {
            let mut lower = x.clone();
            lower[i] *= cut;
            prop_assert!(select_entrants(&inst, &lower).contains(i));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn quantity_competition_matches_pointwise_allocation(
        s in prop::collection::vec(0.0..0.6f64, 2),
        seed in 0..1000u64,
    ) {
        let inst = random_instance(RandomSpec { firms: 2, mixed_weights: false }, seed);
        let market = Canonical::quantity_competition(&inst);
        let actions: Vec<Action> = s.iter().map(|&q| Action::level(q)).collect();
        let out = market.outcome(&actions).unwrap();
        prop_assert!(out.served() <= 1.0 + 1e-6);
        for i in 0..2 {
            let mc = inst
                .values()
                .expect(|v| market.allocation(v, &actions).unwrap()[i], &Integrator::monte_carlo(20_000, seed))
                .unwrap();
            prop_assert!(
                (out.quantity[i] - mc.value).abs() <= 4.0 * mc.std_err + 1e-3,
                "firm {i}: {} vs {:?}", out.quantity[i], mc
            );
            if s.iter().sum::<f64>() <= 1.0 {
                prop_assert!((out.quantity[i] - s[i]).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn interim_quantities_fall_with_own_type_under_common_numbers() {
    for inst in battery(12, 5) {
        let vcs: Vec<_> = inst.firms().iter().map(|f| iron(&f.dist, &f.weight, 4000).unwrap()).collect();
        for i in 0..inst.n() {
            let sample = TypeSample::opponents(&inst, i, 48, 256, 3);
            let grid = inst.firm(i).dist.quantile_grid(40);
            let q: Vec<f64> = grid
                .iter()
                .map(|&t| expected_quantity(&inst, &vcs, i, t, &sample).quantity)
                .collect();
            assert!(q.windows(2).all(|w| w[1] <= w[0]), "firm {i}: {q:?}");
        }
    }
}

#[test]
fn membership_matches_caps_on_random_prices() {
    for (n, kappa) in [(2, 1.0), (3, 0.4)] {
        let report = threshold_consistency(&symmetric(n, kappa), 1000, 17);
        assert_eq!(report.violations, 0, "{report:?}");
    }
    let inst = random_instance(RandomSpec { firms: 3, mixed_weights: false }, 8);
    let report = threshold_consistency(&inst, 1000, 18);
    assert_eq!(report.violations, 0, "{report:?}");
}
