//! Closed-form references computed outside this crate and frozen here.

use std::f64::consts::PI;

use ufgsde::catalog::{circle_line_normalization, CatalogEntry};
use ufgsde::dynamics::{simulate_paths, SimConfig};
use ufgsde::malliavin::{malliavin_matrix, simulate_variational};

/// `int_0^{2 pi} exp(-1/(1 - cos z)) / (1 - cos z) dz`, 30-digit quadrature.
const CIRCLE_LINE_C: f64 = 1.520_346_901_066_281;

/// `(1 - e^{-2kt}) / (2k)` at `k = 2`, `t = 1`.
const OU_MALLIAVIN_K2_T1: f64 = 0.245_421_090_277_816_45;

/// `exp(-(e^t - 1))` at `t = 0.5, 1, 2`.
const GRUSHIN_DECAY: [(f64, f64); 3] = [
    (0.5, 0.522_713_758_984_834_6),
    (1.0, 0.179_374_078_734_017_2),
    (2.0, 0.001_679_841_057_068_197_6),
];

#[test]
fn circle_line_normalization_matches_reference() {
    let (c, err) = circle_line_normalization();
    assert!((c - CIRCLE_LINE_C).abs() <= 1e-10, "{c}");
    assert!(err < 1e-10);
}

#[test]
fn grushin_decay_factor_matches_reference() {
    // With k = 1/2 the variance factor (e^{2kt} - 1) / (2k) is e^t - 1.
    let k = 0.5f64;
    for (t, want) in GRUSHIN_DECAY {
        let got = (-((2.0 * k * t).exp() - 1.0) / (2.0 * k)).exp();
        assert!((got - want).abs() <= 1e-15 * (1.0 + want), "{t}");
    }
}

#[test]
fn gbm_paths_follow_the_exponential_solution() {
    // dX = -2X dt + sqrt(2) X o dB has X_t = x0 exp(-2t + sqrt(2) B_t).
    let e = CatalogEntry::default_for("gbm").unwrap();
    let mut cfg = SimConfig::new(1.0, 1e-3, 20, 7);
    cfg.store_increments = true;
    let ens = simulate_paths(&e.system, &[1.0], &cfg).unwrap();
    for p in 0..ens.n_paths {
        let mut b = 0.0;
        for k in 1..ens.n_times() {
            b += ens.increment(p, k - 1).unwrap()[0];
            let t = ens.times[k];
            let exact = (-2.0 * t + 2f64.sqrt() * b).exp();
            let got = ens.state(p, k)[0];
            assert!((got - exact).abs() <= 1e-2 * exact, "path {p} t {t}: {got} vs {exact}");
        }
    }
}

#[test]
fn circle_paths_keep_the_angle_and_carry_the_noise_in_the_radius() {
    // V0 rotates and V1 scales, and they commute: theta_t = t, log r = sqrt(2) B_t.
    let e = CatalogEntry::default_for("random-circles").unwrap();
    let cfg = SimConfig::new(PI / 2.0, 1e-3, 20, 11);
    let ens = simulate_paths(&e.system, &[1.0, 0.0], &cfg).unwrap();
    let last = ens.n_times() - 1;
    for p in 0..ens.n_paths {
        let b: f64 = (0..last).map(|k| ens.increment(p, k).unwrap()[0]).sum();
        let x = ens.state(p, last);
        let r = x[0].hypot(x[1]);
        // Strong Heun error: about sqrt(steps) dt^{3/2} from the cubic remainder.
        assert!((r.ln() - 2f64.sqrt() * b).abs() <= 1e-2, "path {p}");
        assert!((x[1].atan2(x[0]) - PI / 2.0).abs() <= 5e-3, "path {p}");
    }
}

#[test]
fn ou_malliavin_matrix_is_deterministic() {
    // Additive noise: M_t does not depend on the path.
    let sys = ufgsde::io::parse_system_file("dim = 1\nnoise = 1\nvars = x\nV0 = [-2*x]\nV1 = [1]\n").unwrap();
    let cfg = SimConfig::new(1.0, 1e-3, 1, 3);
    let vp = simulate_variational(&sys, &[0.7], &cfg, 0).unwrap();
    let m = malliavin_matrix(&vp, &sys)[(0, 0)];
    assert!((m - OU_MALLIAVIN_K2_T1).abs() <= 1e-4, "{m}");
}
