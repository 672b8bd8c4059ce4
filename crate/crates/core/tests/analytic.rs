use storage_lagrange::*;

// T = 1, P = 1, E = 4, e0 = 2, eta = 1, O(p) = p^2 / 2, C_T(e) = (4 - e)^2 / 2.
// Charging q costs q^2 / 2 + (2 - q)^2 / 2, minimized at q = 1 (objective 1).
fn one_period() -> (StorageSpec, Vec<CostFunction>, TerminalCost) {
    (
        StorageSpec::new(1.0, 4.0, 1.0, 2.0).unwrap(),
        vec![CostFunction::quadratic(1.0, 0.0).unwrap()],
        TerminalCost::fill_to(4.0),
    )
}

#[test]
fn solve_recovers_closed_form() {
    let (spec, costs, term) = one_period();
    let s = solve(
        &spec,
        &costs,
        &term,
        &SearchConfig::default(),
        PolicyVariant::Relaxed,
    )
    .unwrap();
    assert!((s.theta - 1.0).abs() <= 1e-3, "theta {}", s.theta);
    assert_eq!(s.first_control.net(), -1.0);
    assert!(!s.first_clamped);
    assert!(s.bracket.1 - s.bracket.0 < 1e-3 || s.exact);
}

#[test]
fn horizon_and_dp_agree_on_closed_form() {
    let (spec, costs, term) = one_period();
    let h = solve_horizon(&spec, &costs, &term, &SearchConfig::default()).unwrap();
    assert!((h.objective - 1.0).abs() < 1e-9);
    assert!((h.first_net().unwrap() + 1.0).abs() < 1e-9);
    let d = dp_solve(&spec, &costs, &term, &DpConfig::default()).unwrap();
    assert!((d.objective - 1.0).abs() <= 1e-3);
    let k = kkt_residuals(&spec, &costs, &term, &h).unwrap();
    assert!(k.max_residual() < 1e-9, "{k:?}");
}

#[test]
fn bounds_coincide_without_overlap() {
    // x >= 0 never overlaps charge and discharge, so both variants agree.
    let (spec, costs, term) = one_period();
    let b = solve_bounds(&spec, &costs, &term, &SearchConfig::default()).unwrap();
    assert!((b.theta_lo - b.theta_hi).abs() < 1e-3);
    assert_eq!(b.p_lo, -1.0);
    assert_eq!(b.p_hi, -1.0);
}

#[test]
fn two_periods_split_the_charge() {
    // Two identical periods share the charge equally: q^2 + (2 - 2q)^2 / 2
    // is minimized at q = 2 / 3.
    let spec = StorageSpec::new(1.0, 4.0, 1.0, 2.0).unwrap();
    let costs = vec![CostFunction::quadratic(1.0, 0.0).unwrap(); 2];
    let term = TerminalCost::fill_to(4.0);
    let h = solve_horizon(&spec, &costs, &term, &SearchConfig::default()).unwrap();
    for s in &h.steps {
        assert!((s.dispatch.net() + 2.0 / 3.0).abs() < 1e-9);
    }
    let d = dp_solve(&spec, &costs, &term, &DpConfig::default()).unwrap();
    assert!((d.objective - h.objective).abs() < 1e-3);
}

#[test]
fn warm_control_replays_prefix_then_asks_to_resolve() {
    let spec = StorageSpec::new(1.0, 2.0, 1.0, 1.0).unwrap();
    // Cheap then expensive: charge, then discharge until empty.
    let costs = vec![
        CostFunction::quadratic(1.0, -0.5).unwrap(),
        CostFunction::quadratic(1.0, 0.5).unwrap(),
        CostFunction::quadratic(1.0, 0.5).unwrap(),
        CostFunction::quadratic(1.0, 0.5).unwrap(),
    ];
    let term = TerminalCost::zero();
    let cfg = SearchConfig::default();
    let s = solve(&spec, &costs, &term, &cfg, PolicyVariant::Relaxed).unwrap();
    assert_eq!(s.prefix.len(), s.prefix_len);
    for t in 1..=s.prefix_len {
        match warm_control(&spec, &costs, &s, t).unwrap() {
            WarmControl::Dispatch(d) => assert_eq!(d, s.prefix[t - 1].dispatch),
            WarmControl::Resolve => panic!("period {t} is inside the prefix"),
        }
    }
    assert!(warm_control(&spec, &costs, &s, 0).is_err());
    assert!(warm_control(&spec, &costs, &s, 5).is_err());

    // Without a stored prefix the control is rebuilt from theta.
    let lean = solve(
        &spec,
        &costs,
        &term,
        &SearchConfig {
            collect_prefix: false,
            ..cfg
        },
        PolicyVariant::Relaxed,
    )
    .unwrap();
    assert!(lean.prefix.is_empty());
    assert_eq!(lean.prefix_len, s.prefix_len);
    if s.prefix_len > 0 {
        assert_eq!(
            warm_control(&spec, &costs, &lean, 1).unwrap(),
            WarmControl::Dispatch(s.prefix[0].dispatch)
        );
    }
}

#[test]
fn empty_and_invalid_inputs_are_rejected() {
    let (spec, _, term) = one_period();
    let none: Vec<CostFunction> = Vec::new();
    assert!(matches!(
        solve(
            &spec,
            &none,
            &term,
            &SearchConfig::default(),
            PolicyVariant::Relaxed
        ),
        Err(Error::EmptyHorizon)
    ));
    let narrow = vec![CostFunction::piecewise_linear(-0.5, &[(1.0, 0.5)]).unwrap()];
    assert!(matches!(
        solve(
            &spec,
            &narrow,
            &term,
            &SearchConfig::default(),
            PolicyVariant::Relaxed
        ),
        Err(Error::DomainTooNarrow { period: 1, .. })
    ));
    let costs = vec![CostFunction::quadratic(1.0, 0.0).unwrap()];
    let bad_eps = SearchConfig::with_epsilon(0.0);
    assert!(solve(&spec, &costs, &term, &bad_eps, PolicyVariant::Relaxed).is_err());
    let capped = SearchConfig {
        max_iterations: 3,
        ..SearchConfig::default()
    };
    assert!(matches!(
        solve(&spec, &costs, &term, &capped, PolicyVariant::Relaxed),
        Err(Error::NoConvergence { iterations: 3, .. })
    ));
}

#[test]
fn pwl_flat_marginal_is_resolved_by_horizon_solve() {
    // A single price of 1 in both periods: any split of the charge with the
    // same total is optimal, and the terminal cost pins the total.
    let spec = StorageSpec::new(1.0, 4.0, 1.0, 2.0).unwrap();
    let c = CostFunction::piecewise_linear(-1.0, &[(-1.0, 0.0), (1.0, 1.0)]).unwrap();
    let costs = vec![c; 2];
    let term = TerminalCost::new(1.0, 3.0, 0.0).unwrap();
    let h = solve_horizon(&spec, &costs, &term, &SearchConfig::default()).unwrap();
    let k = kkt_residuals(&spec, &costs, &term, &h).unwrap();
    assert!(k.max_residual() < 1e-9, "{k:?}");
    let d = dp_solve(&spec, &costs, &term, &DpConfig::default()).unwrap();
    assert!(h.objective <= d.objective + 1e-9);
}
