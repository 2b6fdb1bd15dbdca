#![no_main]

use libfuzzer_sys::fuzz_target;
use ufgsde::io::{parse_box, parse_grid, parse_param, parse_point, parse_references, parse_times};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = parse_point(text) {
        assert!(!p.is_empty() && p.iter().all(|v| v.is_finite()));
    }
    if let Ok(b) = parse_box(text) {
        assert!(b.iter().all(|(lo, hi)| lo <= hi));
    }
    if let Ok(g) = parse_grid(text) {
        assert!(g.len() >= 2 && g.windows(2).all(|w| w[0] <= w[1]));
    }
    if let Ok(t) = parse_times(text) {
        assert!(t.iter().all(|v| *v > 0.0) && t.windows(2).all(|w| w[0] < w[1]));
    }
    if let Ok((name, v)) = parse_param(text) {
        assert!(!name.is_empty() && v.is_finite());
    }
    let _ = parse_references(text);
});
