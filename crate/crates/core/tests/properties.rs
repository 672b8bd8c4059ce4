use proptest::prelude::*;
use storage_lagrange::*;

fn quadratic() -> impl Strategy<Value = CostFunction> {
    (1e-3..10.0f64, -10.0..10.0f64).prop_map(|(a, b)| CostFunction::quadratic(a, b).unwrap())
}

// Convex piecewise-linear cost covering [-span, span] with span >= 1.
fn piecewise() -> impl Strategy<Value = CostFunction> {
    (
        1.0..3.0f64,
        prop::collection::vec((-30.0..30.0f64, 0.01..1.0f64), 1..12),
    )
        .prop_map(|(span, raw)| {
            let mut prices: Vec<f64> = raw.iter().map(|r| r.0).collect();
            prices.sort_by(f64::total_cmp);
            let total: f64 = raw.iter().map(|r| r.1).sum();
            let mut q = -span;
            let segments: Vec<(f64, f64)> = prices
                .iter()
                .zip(&raw)
                .map(|(&c, r)| {
                    q += 2.0 * span * r.1 / total;
                    (c, q)
                })
                .collect();
            let mut segments = segments;
            segments.last_mut().unwrap().1 = span;
            CostFunction::piecewise_linear(-span, &segments).unwrap()
        })
}

fn cost() -> impl Strategy<Value = CostFunction> {
    prop_oneof![quadratic(), piecewise()]
}

fn storage() -> impl Strategy<Value = StorageSpec> {
    (0.05..=1.0f64, 1.0..6.0f64, 0.0..=1.0f64)
        .prop_map(|(eta, cap, frac)| StorageSpec::new(1.0, cap, eta, frac * cap).unwrap())
}

fn terminal() -> impl Strategy<Value = TerminalCost> {
    (0.0..2.0f64, 0.0..6.0f64, -5.0..5.0f64)
        .prop_map(|(k, r, s)| TerminalCost::new(k, r, s).unwrap())
}

fn instance() -> impl Strategy<Value = (StorageSpec, Vec<CostFunction>, TerminalCost)> {
    (storage(), prop::collection::vec(cost(), 1..16), terminal())
}

fn variant() -> impl Strategy<Value = PolicyVariant> {
    prop_oneof![
        Just(PolicyVariant::Relaxed),
        Just(PolicyVariant::ChargePreferring),
        Just(PolicyVariant::DischargePreferring),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn nonnegative_multiplier_never_overlaps(
        c in cost(),
        eta in prop_oneof![Just(1.0), 1e-3..=1.0f64],
        x in prop_oneof![Just(0.0), 0.0..100.0f64, 0.0..1e-6f64],
    ) {
        let spec = StorageSpec::new(1.0, 4.0, eta, 2.0).unwrap();
        let d = policy_dispatch(&spec, &c, x, PolicyVariant::Relaxed).unwrap();
        prop_assert_eq!(d.p_plus * d.p_minus, 0.0);
    }

    #[test]
    fn dispatch_stays_in_box(c in cost(), s in storage(), x in -200.0..200.0f64, v in variant()) {
        let d = policy_dispatch(&s, &c, x, v).unwrap();
        prop_assert!(d.p_plus >= 0.0 && d.p_plus <= s.power());
        prop_assert!(d.p_minus >= 0.0 && d.p_minus <= s.power());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn soc_is_monotone_in_the_multiplier(
        (s, costs, term) in instance(),
        a in -60.0..60.0f64,
        b in -60.0..60.0f64,
        v in variant(),
    ) {
        let (x1, x2) = if a <= b { (a, b) } else { (b, a) };
        let t1 = soc_trace(&s, &costs, x1, v).unwrap();
        let t2 = soc_trace(&s, &costs, x2, v).unwrap();
        for (s1, s2) in t1.iter().zip(&t2) {
            prop_assert!(s1 <= s2, "{s1} > {s2}");
        }
        let c1 = classify(x1, &simulate(&s, &costs, x1, v, false).unwrap().crossing, &term);
        let c2 = classify(x2, &simulate(&s, &costs, x2, v, false).unwrap().crossing, &term);
        prop_assert!(
            !(c1 == Classification::AboveOrEqual && c2 == Classification::BelowOrEqual && x1 < x2),
            "x1 = {x1} above, x2 = {x2} below"
        );
    }

    #[test]
    fn bisection_respects_iteration_budget(
        (s, costs, term) in instance(),
        eps in prop_oneof![Just(1e-3), 1e-6..1.0f64],
        v in variant(),
    ) {
        let cfg = SearchConfig::with_epsilon(eps);
        let sol = solve(&s, &costs, &term, &cfg, v).unwrap();
        let (lo, hi) = sol.initial_range;
        prop_assert!(sol.iterations <= bisection_budget(hi - lo, eps) + 1);
        prop_assert!(sol.exact || sol.bracket.1 - sol.bracket.0 < eps);
        prop_assert!(sol.bracket.0 <= sol.theta && sol.theta <= sol.bracket.1);
    }

    #[test]
    fn prefix_is_feasible_and_optimal_for_whole_bracket(
        (s, costs, term) in instance(),
        v in variant(),
    ) {
        let sol = solve(&s, &costs, &term, &SearchConfig::default(), v).unwrap();
        prop_assert_eq!(sol.prefix.len(), sol.prefix_len);
        let mut soc = s.initial();
        for (t, e) in sol.prefix.iter().enumerate() {
            let c = &costs[t];
            let lo = policy_dispatch(&s, c, sol.bracket.0, v).unwrap();
            let hi = policy_dispatch(&s, c, sol.bracket.1, v).unwrap();
            prop_assert!(e.dispatch.net() >= hi.net().min(lo.net()) - 1e-12);
            prop_assert!(e.dispatch.net() <= hi.net().max(lo.net()) + 1e-12);
            soc = soc_step(&s, soc, &e.dispatch);
            prop_assert!(soc > 0.0 && soc < s.capacity());
        }
        let after = soc_step(&s, s.initial(), &sol.first_control);
        prop_assert!(after >= -1e-12 && after <= s.capacity() + 1e-12);
    }

    #[test]
    fn horizon_schedule_is_feasible_and_stationary((s, costs, term) in instance()) {
        let h = solve_horizon(&s, &costs, &term, &SearchConfig::default()).unwrap();
        let k = kkt_residuals(&s, &costs, &term, &h).unwrap();
        let (_, hi) = marginal_envelope(&costs, &term, s.power(), s.capacity(), s.eta()).unwrap();
        prop_assert!(k.max_residual() <= 1e-6 * hi.max(1.0), "{k:?}");
        let objective = objective_of(&costs, &term, &h).unwrap();
        prop_assert_eq!(objective, h.objective);
    }

    #[test]
    fn bounds_are_ordered((s, costs, term) in instance()) {
        let cfg = SearchConfig::default();
        let b = solve_bounds(&s, &costs, &term, &cfg).unwrap();
        prop_assert!(b.theta_lo <= b.theta_hi + 2.0 * cfg.epsilon, "{b:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    // The horizon schedule solves the split relaxation, which is never worse
    // than the physical problem the grid search approximates from above.
    #[test]
    fn horizon_objective_never_exceeds_dp(
        (s, costs, term) in (storage(), prop::collection::vec(cost(), 1..6), terminal()),
    ) {
        let h = solve_horizon(&s, &costs, &term, &SearchConfig::default()).unwrap();
        let cfg = DpConfig { soc_points: 101, power_points: 41, cell_search: true };
        let d = dp_solve(&s, &costs, &term, &cfg).unwrap();
        prop_assert!(h.objective <= d.objective + 1e-7 * d.objective.abs().max(1.0),
            "horizon {} dp {}", h.objective, d.objective);
    }
}
