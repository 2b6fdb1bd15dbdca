#![no_main]

use libfuzzer_sys::fuzz_target;
use ufgsde::expr::{differentiate, evaluate, parse_expression, simplify, Program};

const VARS: [&str; 3] = ["x", "y", "z"];

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(e) = parse_expression(text, &VARS) else { return };
    let names: Vec<String> = VARS.iter().map(|s| s.to_string()).collect();

    // The canonical form reparses to itself.
    let canon = e.to_canonical_string(&names);
    let again = parse_expression(&canon, &VARS).expect("canonical form reparses");
    assert_eq!(again.to_canonical_string(&names), canon);

    // Evaluation paths agree wherever the checked one succeeds.
    let x = [0.3, -1.7, 2.5];
    if let Ok(v) = evaluate(&e, &x) {
        let w = Program::compile(&e).eval(&x);
        assert!(v == w || (v.is_nan() && w.is_nan()) || (v - w).abs() <= 1e-9 * (1.0 + v.abs()));
    }

    // Symbolic passes never panic on parsed input.
    let s = simplify(&e);
    let _ = simplify(&s);
    for i in 0..VARS.len() {
        let _ = simplify(&differentiate(&e, i));
    }
});
