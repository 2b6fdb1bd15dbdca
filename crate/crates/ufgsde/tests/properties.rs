use proptest::prelude::*;

use ufgsde::diagnostics::{ks_distance, EmpiricalDistribution, Reference};
use ufgsde::dynamics::{adjoint_push, numeric_bracket, simulate_paths, FlowConfig, SDESystem, SimConfig};
use ufgsde::expr::{differentiate, evaluate, parse_expression, simplify, Program};
use ufgsde::fields::{build_hierarchy, lie_bracket, Field, FnField, Subset, VectorField};
use ufgsde::geometry::{rank_at, SamplePlan, DEFAULT_RTOL};
use ufgsde::io::{parse_box, parse_system_file, format_system_file};

const VARS: [&str; 2] = ["x", "y"];

/// Smooth, everywhere-finite expressions in `x, y`.
fn smooth_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("x".to_string()),
        Just("y".to_string()),
        (-3i32..=3).prop_map(|c| format!("({c})")),
        (1u32..=9).prop_map(|c| format!("0.{c}")),
    ];
    leaf.prop_recursive(3, 16, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.prop_map(|a| format!("tanh({a})")),
        ]
    })
}

fn field() -> impl Strategy<Value = VectorField> {
    (smooth_expr(), smooth_expr()).prop_map(|(a, b)| VectorField::parse(&[a, b], &VARS).unwrap())
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, 2)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = 1.0 + a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).all(|(u, v)| (u - v).abs() <= tol * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_form_reparses(text in smooth_expr()) {
        let names: Vec<String> = VARS.iter().map(|s| s.to_string()).collect();
        let e = parse_expression(&text, &VARS).unwrap();
        let canon = e.to_canonical_string(&names);
        let again = parse_expression(&canon, &VARS).unwrap();
        prop_assert_eq!(again.to_canonical_string(&names), canon);
    }

    #[test]
    fn simplify_and_compile_preserve_values(text in smooth_expr(), x in point()) {
        let e = parse_expression(&text, &VARS).unwrap();
        let direct = evaluate(&e, &x).unwrap();
        let s = simplify(&e);
        prop_assert!(close(&[evaluate(&s, &x).unwrap()], &[direct], 1e-12));
        prop_assert!(close(&[Program::compile(&e).eval(&x)], &[direct], 1e-12));
        prop_assert_eq!(simplify(&s), s);
    }

    #[test]
    fn derivative_matches_central_difference(text in smooth_expr(), x in point()) {
        let e = parse_expression(&text, &VARS).unwrap();
        for i in 0..2 {
            let d = evaluate(&differentiate(&e, i), &x).unwrap();
            let h = 1e-5;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (evaluate(&e, &xp).unwrap() - evaluate(&e, &xm).unwrap()) / (2.0 * h);
            prop_assert!((d - fd).abs() <= 1e-5 * (1.0 + d.abs()), "{} vs {}", d, fd);
        }
    }

    #[test]
    fn bracket_is_antisymmetric(v in field(), w in field(), x in point()) {
        let vw = lie_bracket(&v, &w).unwrap().eval_vec(&x);
        let wv = lie_bracket(&w, &v).unwrap().eval_vec(&x);
        let neg: Vec<f64> = wv.iter().map(|c| -c).collect();
        prop_assert!(close(&vw, &neg, 1e-12));
    }

    #[test]
    fn bracket_matches_finite_differences(v in field(), w in field(), x in point()) {
        let symbolic = lie_bracket(&v, &w).unwrap().eval_vec(&x);
        let numeric = numeric_bracket(
            &FnField::new(2, |y: &[f64], o: &mut [f64]| v.eval_into(y, o)),
            &FnField::new(2, |y: &[f64], o: &mut [f64]| w.eval_into(y, o)),
            &x,
        );
        prop_assert!(close(&symbolic, &numeric, 1e-5), "{:?} vs {:?}", symbolic, numeric);
    }

    #[test]
    fn jacobi_identity_holds(u in field(), v in field(), w in field(), x in point()) {
        let b = |a: &VectorField, c: &VectorField| lie_bracket(a, c).unwrap();
        let s1 = b(&u, &b(&v, &w)).eval_vec(&x);
        let s2 = b(&v, &b(&w, &u)).eval_vec(&x);
        let s3 = b(&w, &b(&u, &v)).eval_vec(&x);
        let sum: Vec<f64> = (0..2).map(|i| s1[i] + s2[i] + s3[i]).collect();
        let scale = s1.iter().chain(&s2).chain(&s3).fold(1.0f64, |m, c| m.max(c.abs()));
        prop_assert!(sum.iter().all(|c| c.abs() <= 1e-10 * scale), "{:?}", sum);
    }

    #[test]
    fn adding_the_drift_never_lowers_rank(v0 in field(), v1 in field(), x in point(), m in 1usize..3) {
        let t = build_hierarchy(&[v0, v1], m).unwrap();
        let r = rank_at(&t, Subset::Rm, &x, DEFAULT_RTOL).unwrap();
        let r0 = rank_at(&t, Subset::RmWithDrift, &x, DEFAULT_RTOL).unwrap();
        prop_assert!(r <= r0 && r0 <= r + 1 && r0 <= 2);
        if m == 1 {
            let t2 = build_hierarchy(t.base(), 2).unwrap();
            prop_assert!(rank_at(&t2, Subset::Rm, &x, DEFAULT_RTOL).unwrap() >= r);
        }
    }

    #[test]
    fn ks_is_affine_invariant(
        raw in prop::collection::vec(-4.0f64..4.0, 5..60),
        shift in -3.0f64..3.0,
        scale in 0.1f64..4.0,
    ) {
        let moved: Vec<f64> = raw.iter().map(|v| shift + scale * v).collect();
        let a = ks_distance(&raw, &Reference::Gaussian { mean: 0.0, variance: 1.0 }).unwrap();
        let b = ks_distance(&moved, &Reference::Gaussian { mean: shift, variance: scale * scale }).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
        let own = EmpiricalDistribution::new(raw.clone()).unwrap();
        prop_assert_eq!(ks_distance(&raw, &Reference::Empirical(own)).unwrap(), 0.0);
    }

    #[test]
    fn grid_plans_cover_the_box(lo in -5.0f64..0.0, width in 0.1f64..5.0, n in 1usize..7) {
        let bounds = vec![(lo, lo + width), (-1.0, 1.0)];
        let pts = SamplePlan::grid(bounds.clone(), n).unwrap().points();
        prop_assert_eq!(pts.len(), n * n);
        for p in &pts {
            for (c, (a, b)) in p.iter().zip(&bounds) {
                prop_assert!(*a <= *c && *c <= *b);
            }
        }
    }

    #[test]
    fn box_specs_round_trip(axes in prop::collection::vec((-100i32..100, 0i32..50), 1..4)) {
        let text: Vec<String> = axes.iter().map(|(lo, w)| format!("{lo}:{}", lo + w)).collect();
        let parsed = parse_box(&text.join(",")).unwrap();
        for ((lo, w), (a, b)) in axes.iter().zip(&parsed) {
            prop_assert_eq!(*a, *lo as f64);
            prop_assert_eq!(*b, (lo + w) as f64);
        }
    }

    #[test]
    fn system_files_round_trip(v0 in field(), v1 in field()) {
        let sys = SDESystem::new("p", vec!["x".into(), "y".into()], v0, vec![v1]).unwrap();
        let back = parse_system_file(&format_system_file(&sys)).unwrap();
        for (a, b) in sys.fields().iter().zip(back.fields().iter()) {
            prop_assert_eq!(a.to_strings(&sys.variables), b.to_strings(&back.variables));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn ad_is_a_lie_homomorphism(v in field(), u in field(), w in field(), x in point(), t in -0.3f64..0.3) {
        let cfg = FlowConfig::with_dt(1e-3);
        let ad = |y: &VectorField| {
            let v = v.clone();
            let y = y.clone();
            let cfg = cfg.clone();
            FnField::new(2, move |p: &[f64], o: &mut [f64]| match adjoint_push(&v, &y, t, p, &cfg) {
                Ok(a) => o.copy_from_slice(&a.value),
                Err(_) => o.fill(f64::NAN),
            })
        };
        let lhs = numeric_bracket(&ad(&u), &ad(&w), &x);
        let rhs = adjoint_push(&v, &lie_bracket(&u, &w).unwrap(), t, &x, &cfg);
        prop_assume!(rhs.is_ok() && lhs.iter().all(|c| c.is_finite()));
        let rhs = rhs.unwrap().value;
        prop_assert!(close(&lhs, &rhs, 1e-4), "{:?} vs {:?}", lhs, rhs);
    }

    #[test]
    fn ensembles_do_not_depend_on_the_worker_count(seed in any::<u64>(), threads in 1usize..5) {
        let sys = SDESystem::new(
            "circles",
            vec!["x".into(), "y".into()],
            VectorField::parse(&["-y", "x"], &VARS).unwrap(),
            vec![VectorField::parse(&["x", "y"], &VARS).unwrap()],
        )
        .unwrap();
        let cfg = SimConfig::new(0.2, 1e-3, 16, seed);
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let a = serial.install(|| simulate_paths(&sys, &[1.0, 0.0], &cfg)).unwrap();
        let b = pool.install(|| simulate_paths(&sys, &[1.0, 0.0], &cfg)).unwrap();
        prop_assert_eq!(a, b);
    }
}
