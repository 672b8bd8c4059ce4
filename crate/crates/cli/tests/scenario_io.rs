use std::borrow::Cow;

use proptest::prelude::*;
use storage_lagrange::{CostFunction, CostSource, Dispatch, Schedule};
use storage_lagrange_cli::scenario::*;

fn quad_params(c: &CostFunction) -> (f64, f64) {
    match c {
        CostFunction::Quadratic(q) => (q.alpha(), q.beta()),
        other => panic!("expected a quadratic, got {other:?}"),
    }
}

#[test]
fn json_round_trip_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    for s in [
        generate_quadratic(7, 24, QuadraticParams::default()).unwrap(),
        generate_pwl(7, 5, PwlParams::default()).unwrap(),
        generate_interior(7, 12, QuadraticParams::default()).unwrap(),
    ] {
        let path = dir.path().join("s.json");
        write_scenario(&s, &path).unwrap();
        assert_eq!(read_scenario(&path).unwrap(), s);
    }
}

fn analytic_json(storage: &str) -> String {
    format!(
        r#"{{"version":1,"family":"custom","seed":0,"storage":{storage},"T":1,
        "terminal":{{"kappa":1,"e_ref":4,"slope":0}},
        "costs":[{{"type":"quad","alpha":1,"beta":0}}]}}"#
    )
}

#[test]
fn missing_field_is_named() {
    let err = scenario_from_json(&analytic_json(r#"{"P":1,"E":4,"e0":2}"#), "in.json").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("eta"), "{msg}");
    assert!(msg.contains("in.json"), "{msg}");
}

#[test]
fn invariant_violations_are_rejected() {
    let ok = scenario_from_json(&analytic_json(r#"{"P":1,"E":4,"eta":1,"e0":2}"#), "x").unwrap();
    assert_eq!(ok.horizon(), 1);
    let err =
        scenario_from_json(&analytic_json(r#"{"P":1,"E":4,"eta":1,"e0":5}"#), "x").unwrap_err();
    assert!(matches!(err, ScenarioError::Invalid { ref context, .. } if context == "storage"));
    let err = scenario_from_json(&analytic_json(r#"{"P":1,"E":4,"eta":1.5,"e0":2}"#), "x");
    assert!(err.is_err());
    let unknown = analytic_json(r#"{"P":1,"E":4,"eta":1,"e0":2,"extra":0}"#);
    assert!(scenario_from_json(&unknown, "x").is_err());
    let narrow = r#"{"version":1,"family":"custom","seed":0,"storage":{"P":1,"E":4,"eta":1,"e0":2},"T":1,
        "terminal":{"kappa":1,"e_ref":4,"slope":0},
        "costs":[{"type":"pwl","q_lo":-0.5,"segments":[[1,0.5]]}]}"#;
    assert!(scenario_from_json(narrow, "x").is_err());
    let short = analytic_json(r#"{"P":1,"E":4,"eta":1,"e0":2}"#).replace(r#""T":1"#, r#""T":2"#);
    assert!(scenario_from_json(&short, "x").is_err());
}

#[test]
fn generation_is_deterministic() {
    let p = QuadraticParams::default();
    assert_eq!(
        generate_quadratic(11, 50, p).unwrap(),
        generate_quadratic(11, 50, p).unwrap()
    );
    assert_ne!(
        generate_quadratic(11, 50, p).unwrap(),
        generate_quadratic(12, 50, p).unwrap()
    );
    let w = PwlParams::default();
    assert_eq!(
        generate_pwl(5, 4, w).unwrap(),
        generate_pwl(5, 4, w).unwrap()
    );
    // Period t depends only on (seed, t): a longer horizon extends a shorter one.
    let short = generate_quadratic(3, 10, p).unwrap();
    let long = generate_quadratic(3, 20, p).unwrap();
    assert_eq!(short.costs[..], long.costs[..10]);
}

#[test]
fn generator_output_is_pinned() {
    // Guards the cross-platform contract: these values must never change.
    let s = generate_quadratic(0, 2, QuadraticParams::default()).unwrap();
    let json = scenario_to_json(&s);
    let again = scenario_from_json(&json, "pinned").unwrap();
    assert_eq!(again.costs, s.costs);
    let (a, b) = quad_params(&s.costs[0]);
    assert_eq!((a.to_bits(), b.to_bits()), PINNED_PERIOD_0);
}

const PINNED_PERIOD_0: (u64, u64) = (0x3fcf505265ef5ed9, 0xbfc7047387d50e80);

#[test]
fn draws_follow_the_documented_stream() {
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    let (seed, t) = (42u64, 5usize);
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    let mut unit = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let alpha = ALPHA_FLOOR + (10.0 - ALPHA_FLOOR) * unit();
    let beta = -10.0 + 10.0 * unit();
    let s = generate_quadratic(seed, t + 1, QuadraticParams::default()).unwrap();
    assert_eq!(quad_params(&s.costs[t]), (alpha, beta));
}

#[test]
fn stream_matches_materialized_costs() {
    let p = QuadraticParams::default();
    let s = generate_quadratic(9, 40, p).unwrap();
    let stream = QuadraticStream::new(9, 40, p).unwrap();
    assert_eq!(stream.horizon(), 40);
    for t in 0..40 {
        let c = stream.cost(t);
        assert!(matches!(c, Cow::Owned(_)));
        assert_eq!(*c, s.costs[t]);
    }
    let interior = generate_interior(9, 40, p).unwrap();
    assert_eq!(
        stream.interior_storage(),
        (interior.spec, interior.terminal)
    );
}

#[test]
fn default_ranges_hold() {
    let s = generate_quadratic(1, 500, QuadraticParams::default()).unwrap();
    assert_eq!(s.spec.power(), 1.0);
    assert_eq!(s.spec.capacity(), 4.0);
    assert_eq!(s.spec.initial(), 2.0);
    assert_eq!(s.spec.eta(), 0.92);
    for c in &s.costs {
        let (a, b) = quad_params(c);
        assert!((ALPHA_FLOOR..=10.0).contains(&a), "alpha {a}");
        assert!((-10.0..=0.0).contains(&b), "beta {b}");
    }
}

#[test]
fn generator_parameters_are_checked() {
    let p = QuadraticParams::default();
    assert!(generate_quadratic(0, 0, p).is_err());
    let empty = QuadraticParams {
        alpha: (-2.0, -1.0),
        ..p
    };
    assert!(generate_quadratic(0, 5, empty).is_err());
    let inverted = QuadraticParams {
        beta: (1.0, -1.0),
        ..p
    };
    assert!(generate_quadratic(0, 5, inverted).is_err());
    let narrow = PwlParams {
        demand_span: 0.5,
        ..PwlParams::default()
    };
    assert!(generate_pwl(0, 5, narrow).is_err());
    let none = PwlParams {
        segments: 0,
        ..PwlParams::default()
    };
    assert!(generate_pwl(0, 5, none).is_err());
}

#[test]
fn single_segment_is_flat() {
    let s = generate_pwl(
        4,
        3,
        PwlParams {
            segments: 1,
            ..PwlParams::default()
        },
    )
    .unwrap();
    for c in &s.costs {
        let CostFunction::PiecewiseLinear(p) = c else {
            panic!()
        };
        assert_eq!(p.segments().len(), 1);
        let (lo, hi) = c.domain();
        for x in [-100.0, -1.0, 0.0, 3.0, 100.0] {
            let y = c.inverse_marginal(x);
            assert!(y == lo || y == hi, "phi({x}) = {y}");
        }
    }
}

#[test]
fn schedule_csv_round_trip() {
    let s = generate_quadratic(2, 6, QuadraticParams::default()).unwrap();
    let mut sched = Schedule::from_dispatches(
        &s.spec,
        &[0.3, -0.4, 0.0, 1.0, -1.0, 0.25].map(Dispatch::from_net),
    );
    sched.theta = Some(vec![1.5; 7]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    write_schedule_file(&sched, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("t,p_plus,p_minus,net,soc,theta\n"));
    let back = read_schedule_file(&path).unwrap();
    assert_eq!(back.steps, sched.steps);
    assert_eq!(back.theta, sched.theta);
    assert_eq!(back.initial_soc, sched.initial_soc);

    sched.theta = None;
    write_schedule_file(&sched, &path).unwrap();
    assert_eq!(read_schedule_file(&path).unwrap().theta, None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pwl_curves_are_convex_and_cover_the_box(seed in any::<u64>(), j in 1usize..300) {
        let s = generate_pwl(seed, 2, PwlParams { segments: j, ..PwlParams::default() }).unwrap();
        s.validate().unwrap();
        for c in &s.costs {
            let CostFunction::PiecewiseLinear(p) = c else { panic!() };
            prop_assert_eq!(p.segments().len(), j);
            prop_assert_eq!(p.lower(), -2.0);
            prop_assert_eq!(p.upper(), 2.0);
            for w in p.segments().windows(2) {
                prop_assert!(w[0].marginal <= w[1].marginal);
                prop_assert!(w[0].upper < w[1].upper);
            }
            for g in p.segments() {
                prop_assert!((-30.0..=0.0).contains(&g.marginal));
            }
        }
    }

    #[test]
    fn quadratic_draws_respect_ranges(
        seed in any::<u64>(),
        lo in -1.0..5.0f64,
        width in 0.0..5.0f64,
        b in -10.0..10.0f64,
    ) {
        let p = QuadraticParams { alpha: (lo, lo.max(ALPHA_FLOOR) + width), beta: (b, b + width) };
        let s = generate_quadratic(seed, 8, p).unwrap();
        for c in &s.costs {
            let (a, beta) = quad_params(c);
            prop_assert!(a >= lo.max(ALPHA_FLOOR) && a <= p.alpha.1);
            prop_assert!(beta >= b && beta <= b + width);
        }
    }
}
