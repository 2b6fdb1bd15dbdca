//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Tolerances are pinned below and never loosened to make a
//! criterion pass.

// `!(x <= tol)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::process::Command;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ufgsde::catalog::{self, linear_random, CatalogEntry};
use ufgsde::diagnostics::{
    convergence_study, fokker_planck_residual, ks_distance, semigroup_derivative, ConvergenceConfig,
    DerivativeOptions, Reference,
};
use ufgsde::dynamics::{
    adjoint_push, auxiliary_process, flow_limit, numeric_bracket, rank_along_path, simulate_paths, FlowConfig,
    FlowLimit, FlowLimitConfig, PathEnsemble, Recording, SimConfig,
};
use ufgsde::expr::parse_expression;
use ufgsde::fields::{lie_bracket, Field, FnField, Subset, VectorField};
use ufgsde::geometry::{
    build_chart, chart_samples, check_oac, check_ufg, rank_at, verify_chart_structure, NewtonConfig, SamplePlan,
    Verdict, DEFAULT_BLOWUP, DEFAULT_RTOL,
};
use ufgsde::io::parse_system_file;
use ufgsde::malliavin::{block_and_rank_check, malliavin_matrix, simulate_variational_paths};

const BRACKET_TOL: f64 = 1e-10;
const BRACKET_POINTS: usize = 100;
const UFG_RESIDUAL_TOL: f64 = 1e-10;
const UFG_GRID: usize = 32;
const LINEAR_DRAWS: u64 = 20;
const PSI_COEFFICIENT_FLOOR: f64 = 1e6;
const OAC_TOL: f64 = 1e-10;
const CIRCLE_LINE_LAMBDA_TOL: f64 = 1e-6;
const LINEAR_EIG_TOL: f64 = 1e-10;
const ENSEMBLE_PATHS: usize = 10_000;
const DT: f64 = 1e-3;
const ANGLE_TOL: f64 = 5e-3;
const KS_TOL: f64 = 0.02;
const AUX_TOL: f64 = 5e-3;
const HEISENBERG_PATH_TOL: f64 = 1e-6;
const RANK_PATHS: usize = 1_000;
const DERIVATIVE_SIGMAS: f64 = 3.0;
const FLOW_LIMIT_TOL: f64 = 1e-6;
const SINE_OU_KS_TOL: f64 = 0.03;
const SINE_OU_ZETA_TOL: f64 = 1e-3;
const DIRAC_KS_TOL: f64 = 0.1;
const FP_TOL: f64 = 1e-8;
const FP_NEGATIVE_FLOOR: f64 = 1e-2;
const FP_GRID: usize = 400;
const MALLIAVIN_PATHS: usize = 100;
const MALLIAVIN_BLOCK_TOL: f64 = 1e-6;
const MALLIAVIN_COND: f64 = 1e10;
const OU_MALLIAVIN_REL: f64 = 0.02;
const CHART_TOL: f64 = 1e-5;
const CHART_SAMPLES: usize = 100;
const CHART_ROUNDTRIP_TOL: f64 = 1e-8;
const AD_SELF_TOL: f64 = 1e-8;
const AD_HOMOMORPHISM_TOL: f64 = 1e-4;
const AD_POINTS: usize = 10;
const SEED: u64 = 20_240_601;

type Outcome = Result<String, String>;

fn entry(name: &str, params: &[(&str, f64)]) -> CatalogEntry {
    let p: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    catalog::get(name, &p).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn random_point(rng: &mut ChaCha8Rng, domain: &[(f64, f64)]) -> Vec<f64> {
    domain.iter().map(|(lo, hi)| rng.gen_range(*lo..*hi)).collect()
}

fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let scale = 1.0 + want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    got.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Records exactly the requested times (nearest integration steps).
fn at_times(t_end: f64, times: &[f64], paths: usize, seed: u64) -> SimConfig {
    let mut cfg = SimConfig::new(t_end, DT, paths, seed);
    cfg.recording = Recording::Steps(times.iter().map(|t| cfg.nearest_step(*t)).collect());
    cfg.store_increments = false;
    cfg
}

fn c1_bracket_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    type Expected = Box<dyn Fn(&[f64]) -> Vec<f64>>;
    let k = 2.0;
    let cases: Vec<(&str, CatalogEntry, usize, usize, Expected)> = vec![
        ("gbm [V1,V0]=0", entry("gbm", &[]), 1, 0, Box::new(|_: &[f64]| vec![0.0])),
        (
            "sinfields [V0,V1]=cos x V1",
            entry("sinfields", &[]),
            0,
            1,
            Box::new(|x: &[f64]| vec![0.0, x[0].cos() * x[0].sin()]),
        ),
        (
            "circle-line [V1,V0]=-V1",
            entry("circle-line", &[]),
            1,
            0,
            Box::new(|x: &[f64]| vec![-(1.0 - x[0].cos())]),
        ),
        (
            "sine-ou [V1,V0]=(-k+sin(zeta)/zeta)V1",
            entry("sine-ou", &[("k", k)]),
            1,
            0,
            Box::new(move |x: &[f64]| vec![(-k + x[1].sin() / x[1]) * x[1], 0.0]),
        ),
    ];
    let mut worst = 0.0f64;
    for (label, e, i, j, want) in &cases {
        let fields = e.system.fields();
        let b = lie_bracket(&fields[*i], &fields[*j]).map_err(|err| format!("{label}: {err}"))?;
        for _ in 0..BRACKET_POINTS {
            let x = random_point(&mut rng, &e.domain);
            let err = rel_err(&b.eval_vec(&x), &want(&x));
            worst = worst.max(err);
            if !(err <= BRACKET_TOL) {
                return Err(format!("{label} fails at {x:?}: error {err:e}"));
            }
        }
    }
    check(true, format!("4 identities x {BRACKET_POINTS} points, max rel err {worst:.1e} <= {BRACKET_TOL:e}"))
}

fn c2_ufg() -> Outcome {
    let sin = entry("sinfields", &[]);
    let t = sin.system.hierarchy(1).unwrap();
    let plan = SamplePlan::grid(vec![(-3.0, 3.0), (-3.0, 3.0)], UFG_GRID).unwrap();
    let r = check_ufg(&t, &plan, 1, UFG_RESIDUAL_TOL, DEFAULT_BLOWUP, DEFAULT_RTOL).map_err(|e| e.to_string())?;
    if r.verdict != Verdict::SatisfiedOnSamples || r.max_residual() > UFG_RESIDUAL_TOL {
        return Err(format!("sinfields: {} with residual {:e}", r.verdict, r.max_residual()));
    }
    let mut linear_worst = 0.0f64;
    for draw in 0..LINEAR_DRAWS {
        let n = 1 + (draw as usize % 4);
        let noise = 1 + (draw as usize / 4) % n;
        let e = linear_random(n, noise, draw).map_err(|e| e.to_string())?;
        let m = 2 * n - 1;
        let t = e.system.hierarchy(m).unwrap();
        let plan = SamplePlan::random(e.domain.clone(), 20, draw).unwrap();
        let r = check_ufg(&t, &plan, m, UFG_RESIDUAL_TOL, DEFAULT_BLOWUP, DEFAULT_RTOL).map_err(|e| e.to_string())?;
        linear_worst = linear_worst.max(r.max_residual());
        if r.verdict != Verdict::SatisfiedOnSamples {
            return Err(format!("linear draw {draw} (N={n}): {} residual {:e}", r.verdict, r.max_residual()));
        }
    }
    let psi = entry("non-ufg-psi", &[]);
    let t = psi.system.hierarchy(3).unwrap();
    let plan = SamplePlan::grid(psi.domain.clone(), UFG_GRID).unwrap();
    let r = check_ufg(&t, &plan, 3, UFG_RESIDUAL_TOL, DEFAULT_BLOWUP, DEFAULT_RTOL).map_err(|e| e.to_string())?;
    let ok = r.verdict == Verdict::Suspect && r.max_coefficient() > PSI_COEFFICIENT_FLOOR;
    check(
        ok,
        format!(
            "sinfields residual {:.1e}; {LINEAR_DRAWS} linear draws max residual {linear_worst:.1e}; psi {} with max coefficient {:.1e}",
            sin_residual(),
            r.verdict,
            r.max_coefficient()
        ),
    )
}

fn sin_residual() -> f64 {
    let sin = entry("sinfields", &[]);
    let t = sin.system.hierarchy(1).unwrap();
    let plan = SamplePlan::grid(vec![(-3.0, 3.0), (-3.0, 3.0)], UFG_GRID).unwrap();
    check_ufg(&t, &plan, 1, UFG_RESIDUAL_TOL, DEFAULT_BLOWUP, DEFAULT_RTOL).unwrap().max_residual()
}

fn c3_oac() -> Outcome {
    let cl = entry("circle-line", &[]);
    let t = cl.system.hierarchy(1).unwrap();
    let plan = SamplePlan::grid(cl.domain.clone(), 200).unwrap();
    let r = check_oac(&t, &plan, 1.0, OAC_TOL).map_err(|e| e.to_string())?;
    let cert = r.certified_lambda0.unwrap_or(f64::NAN);
    if r.verdict != Verdict::SatisfiedOnSamples || !((cert - 1.0).abs() <= CIRCLE_LINE_LAMBDA_TOL) {
        return Err(format!("circle-line: {} with certified lambda0 {cert}", r.verdict));
    }
    let mut flips = Vec::new();
    for k in [-1.0, -0.1, 0.1, 1.0] {
        let g = entry("grushin", &[("k", k)]);
        let t = g.system.hierarchy(1).unwrap();
        let plan = SamplePlan::grid(g.domain.clone(), 17).unwrap();
        let r = check_oac(&t, &plan, 0.05, OAC_TOL).map_err(|e| e.to_string())?;
        let holds = r.verdict == Verdict::SatisfiedOnSamples;
        let cert_positive = r.certified_lambda0.is_some_and(|c| c > 0.0);
        if holds != (k > 0.0) || cert_positive != (k > 0.0) {
            return Err(format!("grushin k={k}: {} certified {:?}", r.verdict, r.certified_lambda0));
        }
        flips.push(format!("k={k}:{}", if holds { "holds" } else { "violated" }));
    }
    let mut worst = 0.0f64;
    let lambda = 0.5;
    for draw in 0..LINEAR_DRAWS {
        let n = 1 + (draw as usize % 4);
        let noise = 1 + (draw as usize / 4) % n;
        let e = linear_random(n, noise, 100 + draw).map_err(|e| e.to_string())?;
        let m = 2 * n - 1;
        let t = e.system.hierarchy(m).unwrap();
        let x = vec![0.1; n];
        let r = check_oac(&t, &SamplePlan::list(vec![x.clone()]).unwrap(), lambda, OAC_TOL).map_err(|e| e.to_string())?;
        let got = r.records[0].max_eigenvalue.unwrap();
        let a = e.system.drift.eval_jacobian(&x);
        let mut direct = f64::NEG_INFINITY;
        for v in &e.system.noise {
            let mut b = DMatrix::from_column_slice(n, 1, &v.eval_vec(&x));
            // `A^k C` has weighted index length 1 + 2k.
            for _ in 0..m.div_ceil(2) {
                let ab = &a * &b;
                let outer = (&a + DMatrix::identity(n, n) * lambda) * &b * b.transpose();
                let sym = (&outer + outer.transpose()) * 0.5;
                let top = SymmetricEigen::new(sym).eigenvalues.max();
                direct = direct.max(top / (1.0 + ab.norm() * b.norm()));
                b = ab;
            }
        }
        worst = worst.max((got - direct).abs());
        if !((got - direct).abs() <= LINEAR_EIG_TOL) {
            return Err(format!("linear draw {draw}: checker {got:e} vs direct {direct:e}"));
        }
    }
    check(
        true,
        format!(
            "circle-line certified lambda0 {cert:.9}; grushin {}; linear max |checker - direct| {worst:.1e}",
            flips.join(" ")
        ),
    )
}

fn wrap(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

fn c4_random_circles() -> Outcome {
    let e = entry("random-circles", &[]);
    let times = [PI / 4.0, PI / 2.0, PI];
    let ens = simulate_paths(&e.system, &[1.0, 0.0], &at_times(PI, &times, ENSEMBLE_PATHS, SEED))
        .map_err(|e| e.to_string())?;
    let mut angle_worst = 0.0f64;
    let mut ks_worst = 0.0f64;
    for k in 1..ens.n_times() {
        let t = ens.times[k];
        let mut log_r = Vec::with_capacity(ens.n_paths);
        for p in 0..ens.n_paths {
            let x = ens.state(p, k);
            angle_worst = angle_worst.max(wrap(x[1].atan2(x[0]) - t).abs());
            log_r.push(x[0].hypot(x[1]).ln());
        }
        let ks = ks_distance(&log_r, &Reference::Gaussian { mean: 0.0, variance: 2.0 * t }).map_err(|e| e.to_string())?;
        ks_worst = ks_worst.max(ks);
    }
    let v = e.v0_perp.clone().expect("catalog V0perp");
    let z = auxiliary_process(&ens, &v, &FlowConfig::with_dt(DT)).map_err(|e| e.to_string())?;
    let mut zy_worst = 0.0f64;
    for p in 0..z.n_paths {
        for k in 0..z.n_times() {
            zy_worst = zy_worst.max(z.state(p, k)[1].abs());
        }
    }
    let ok = angle_worst <= ANGLE_TOL && ks_worst <= KS_TOL && zy_worst <= AUX_TOL;
    check(
        ok,
        format!(
            "max angle err {angle_worst:.2e} <= {ANGLE_TOL:e}; max KS(log r) {ks_worst:.4} <= {KS_TOL}; max |Z_y| {zy_worst:.2e} <= {AUX_TOL:e}"
        ),
    )
}

fn monotone_profiles(ens: &PathEnsemble, e: &CatalogEntry) -> Result<Vec<usize>, String> {
    let t = e.system.hierarchy(e.level).unwrap();
    let mut finals = Vec::new();
    for p in 0..ens.n_paths {
        let prof = rank_along_path(ens, p, &t, DEFAULT_RTOL);
        if !prof.windows(2).all(|w| w[1].1 <= w[0].1) {
            return Err(format!("path {p} rank increases: {prof:?}"));
        }
        finals.push(prof.first().map(|x| x.1).unwrap_or(0));
    }
    Ok(finals)
}

fn c5_heisenberg() -> Outcome {
    let e = entry("ufg-heisenberg", &[]);
    let mut cfg = SimConfig::new(2.0, DT, RANK_PATHS, SEED);
    cfg.recording = Recording::Stride(50);
    cfg.store_increments = false;
    let from_x = simulate_paths(&e.system, &[1.0, 0.0, 0.0], &cfg).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for p in 0..from_x.n_paths {
        for (k, t) in from_x.times.iter().enumerate() {
            worst = worst.max((from_x.state(p, k)[0] - (-t).exp()).abs());
        }
    }
    let t = e.system.hierarchy(e.level).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for _ in 0..50 {
        let mut x = random_point(&mut rng, &e.domain);
        if x[0].abs() < 1e-3 {
            x[0] = 0.5;
        }
        let off = rank_at(&t, Subset::RmWithDrift, &x, DEFAULT_RTOL).unwrap();
        x[0] = 0.0;
        let on = rank_at(&t, Subset::RmWithDrift, &x, DEFAULT_RTOL).unwrap();
        if off != 3 || on != 2 {
            return Err(format!("rank profile at {x:?}: off-plane {off}, on-plane {on}"));
        }
    }
    let r1 = monotone_profiles(&from_x, &e)?;
    let from_plane = simulate_paths(&e.system, &[0.0, 1.0, 1.0], &cfg).map_err(|e| e.to_string())?;
    let r2 = monotone_profiles(&from_plane, &e)?;
    let ok = worst <= HEISENBERG_PATH_TOL && r1.iter().all(|r| *r == 3) && r2.iter().all(|r| *r == 2);
    check(
        ok,
        format!("max |x_t - x0 e^-t| {worst:.1e} <= {HEISENBERG_PATH_TOL:e}; ranks 3 off / 2 on x=0; {RANK_PATHS}+{RANK_PATHS} profiles non-increasing"),
    )
}

fn c6_grushin() -> Outcome {
    let e = entry("grushin", &[("k", -1.0)]);
    let times = [0.5, 1.0, 2.0];
    let ens = simulate_paths(&e.system, &[0.0, 1.0], &at_times(2.0, &times, ENSEMBLE_PATHS, SEED))
        .map_err(|e| e.to_string())?;
    let v = e.v0_perp.clone().expect("catalog V0perp");
    let z = auxiliary_process(&ens, &v, &FlowConfig::with_dt(DT)).map_err(|e| e.to_string())?;
    let mut ks_worst = 0.0f64;
    for k in 1..z.n_times() {
        let t = z.times[k];
        let var = 1.0 - (-2.0 * t).exp();
        let ks = ks_distance(&z.coordinate_samples(k, 0), &Reference::Gaussian { mean: 0.0, variance: var })
            .map_err(|e| e.to_string())?;
        ks_worst = ks_worst.max(ks);
    }
    let g = entry("grushin", &[("k", 0.5)]);
    let f = parse_expression("sin(z)", &g.system.variables).unwrap();
    let opts = DerivativeOptions {
        n_paths: ENSEMBLE_PATHS,
        seed: SEED,
        dt: DT,
        h: None,
        common_random_numbers: true,
    };
    let est = semigroup_derivative(&g.system, &f, &g.system.noise[0], &[0.0, 1.0], &times, &opts)
        .map_err(|e| e.to_string())?;
    let mut sigmas = 0.0f64;
    for d in &est {
        let oracle = (-(d.time.exp() - 1.0)).exp();
        let s = (d.estimate.value - oracle).abs() / d.estimate.stderr.max(f64::MIN_POSITIVE);
        sigmas = sigmas.max(s);
    }
    check(
        ks_worst <= KS_TOL && sigmas <= DERIVATIVE_SIGMAS,
        format!("max KS(z_t) {ks_worst:.4} <= {KS_TOL}; derivative within {sigmas:.2} <= {DERIVATIVE_SIGMAS} standard errors"),
    )
}

fn c7_sine_ou() -> Outcome {
    let e = entry("sine-ou", &[("k", 2.0)]);
    let v = e.v0_perp.clone().expect("catalog V0perp");
    let limit = match flow_limit(&v, &[0.0, 4.0], &FlowLimitConfig::default()).map_err(|e| e.to_string())? {
        FlowLimit::Converged { point, .. } => point[1],
        other => return Err(format!("flow limit: {other:?}")),
    };
    if !((limit - 2.0 * PI).abs() <= FLOW_LIMIT_TOL) {
        return Err(format!("flow limit {limit} vs 2 pi"));
    }
    let ens = simulate_paths(&e.system, &[0.0, 4.0], &at_times(10.0, &[10.0], ENSEMBLE_PATHS, SEED))
        .map_err(|e| e.to_string())?;
    let z = auxiliary_process(&ens, &v, &FlowConfig::with_dt(DT)).map_err(|e| e.to_string())?;
    let last = z.n_times() - 1;
    let var = (2.0 * PI).powi(2) / 2.0;
    let ks = ks_distance(&z.coordinate_samples(last, 0), &Reference::Gaussian { mean: 0.0, variance: var })
        .map_err(|e| e.to_string())?;
    let zeta_dev = ens
        .coordinate_samples(last, 1)
        .iter()
        .fold(0.0f64, |m, v| m.max((v - 2.0 * PI).abs()));
    let cfg = ConvergenceConfig {
        times: vec![2.0, 4.0, 6.0, 8.0, 10.0],
        references: vec![Some(Reference::Dirac(0.0)), None],
        n_paths: ENSEMBLE_PATHS,
        seed: SEED,
        dt: DT,
        escape_radius: 1e8,
        tolerance: Some(DIRAC_KS_TOL),
    };
    let r = convergence_study(&e.system, &[0.0, 1.0], &cfg).map_err(|e| e.to_string())?;
    let series = &r.coordinates[0].ks;
    let decreasing = series.windows(2).all(|w| w[1] <= w[0]);
    let final_ks = *series.last().unwrap();
    check(
        ks <= SINE_OU_KS_TOL && zeta_dev <= SINE_OU_ZETA_TOL && decreasing && final_ks <= DIRAC_KS_TOL,
        format!(
            "limit {limit:.9}; KS(z_10) {ks:.4} <= {SINE_OU_KS_TOL}; max |zeta_10 - 2pi| {zeta_dev:.1e}; dirac distances {series:.3?} <= {DIRAC_KS_TOL}"
        ),
    )
}

fn c8_fokker_planck() -> Outcome {
    let cl = entry("circle-line", &[]);
    let grid: Vec<f64> = (0..FP_GRID)
        .map(|i| 0.2 + (2.0 * PI - 0.4) * i as f64 / (FP_GRID - 1) as f64)
        .collect();
    let rho = cl.density.as_ref().expect("catalog density").expr.clone();
    let good = fokker_planck_residual(&cl.system, &rho, &grid).map_err(|e| e.to_string())?;
    let gauss = parse_expression("exp(-(z - 3.14159)^2/2)/2.5066283", &cl.system.variables).unwrap();
    let bad = fokker_planck_residual(&cl.system, &gauss, &grid).map_err(|e| e.to_string())?;
    let ou = parse_system_file("dim = 1\nnoise = 1\nvars = x\nV0 = [-x]\nV1 = [1]\n").unwrap();
    let ou_rho = parse_expression("exp(-x^2/2)/2.5066282746310002", &ou.variables).unwrap();
    let ou_grid: Vec<f64> = (0..FP_GRID).map(|i| -5.0 + 10.0 * i as f64 / (FP_GRID - 1) as f64).collect();
    let ou_r = fokker_planck_residual(&ou, &ou_rho, &ou_grid).map_err(|e| e.to_string())?;
    check(
        good.max_abs <= FP_TOL && bad.max_abs >= FP_NEGATIVE_FLOOR && ou_r.max_abs <= FP_TOL,
        format!(
            "rho0 residual {:.1e} <= {FP_TOL:e}; gaussian control {:.2e} >= {FP_NEGATIVE_FLOOR:e}; OU {:.1e} <= {FP_TOL:e}",
            good.max_abs, bad.max_abs, ou_r.max_abs
        ),
    )
}

fn malliavin_case(e: &CatalogEntry, x0: &[f64]) -> Result<(f64, f64), String> {
    let mut cfg = SimConfig::new(1.0, DT, MALLIAVIN_PATHS, SEED);
    cfg.store_increments = false;
    let mut off = 0.0f64;
    let mut cond = 0.0f64;
    for (p, res) in simulate_variational_paths(&e.system, x0, &cfg).into_iter().enumerate() {
        let vp = res.map_err(|err| format!("{} path {p}: {err}", e.name))?;
        let m = malliavin_matrix(&vp, &e.system);
        let r = block_and_rank_check(&m, 1, MALLIAVIN_BLOCK_TOL, MALLIAVIN_COND).map_err(|err| err.to_string())?;
        off = off.max(r.off_block_relative);
        cond = cond.max(r.upper_condition);
        if !(r.block_holds && r.upper_invertible) {
            return Err(format!(
                "{} path {p}: off-block {:e}, condition {:e}",
                e.name, r.off_block_relative, r.upper_condition
            ));
        }
    }
    Ok((off, cond))
}

fn c9_malliavin() -> Outcome {
    let (off_s, cond_s) = malliavin_case(&entry("sine-ou", &[("k", 2.0)]), &[0.0, 4.0])?;
    let (off_g, cond_g) = malliavin_case(&entry("grushin", &[("k", -1.0)]), &[0.0, 1.0])?;
    let k = 2.0f64;
    let ou = parse_system_file("dim = 1\nnoise = 1\nvars = x\nV0 = [-2*x]\nV1 = [1]\n").unwrap();
    let mut cfg = SimConfig::new(1.0, DT, 1, SEED);
    cfg.store_increments = false;
    let vp = simulate_variational_paths(&ou, &[0.3], &cfg).remove(0).map_err(|e| e.to_string())?;
    let m = malliavin_matrix(&vp, &ou)[(0, 0)];
    let want = (1.0 - (-2.0 * k).exp()) / (2.0 * k);
    let rel = (m - want).abs() / want;
    check(
        rel <= OU_MALLIAVIN_REL,
        format!(
            "off-block rel {:.1e} (sine-ou) {:.1e} (grushin) <= {MALLIAVIN_BLOCK_TOL:e}; condition {cond_s:.1e} / {cond_g:.1e} <= {MALLIAVIN_COND:e}; OU rel err {rel:.1e} <= {OU_MALLIAVIN_REL}",
            off_s, off_g
        ),
    )
}

fn c10_charts() -> Outcome {
    let flow = FlowConfig::with_dt(DT);
    let c = entry("random-circles", &[]);
    let t = c.system.hierarchy(c.level).unwrap();
    let chart = build_chart(&t, &[1.0, 0.0], 0.5, DEFAULT_RTOL, NewtonConfig::default(), flow.clone())
        .map_err(|e| e.to_string())?;
    let samples = chart_samples(&chart, CHART_SAMPLES, 0.5, SEED);
    let r = verify_chart_structure(&chart, &t, &samples, 1e-4, CHART_TOL).map_err(|e| e.to_string())?;
    let h = entry("ufg-heisenberg", &[]);
    let th = h.system.hierarchy(h.level).unwrap();
    let hc = build_chart(&th, &[1.0, 0.0, 0.0], 0.5, DEFAULT_RTOL, NewtonConfig::default(), flow)
        .map_err(|e| e.to_string())?;
    let hs = chart_samples(&hc, CHART_SAMPLES, 0.5, SEED);
    let hr = verify_chart_structure(&hc, &th, &hs, 1e-4, CHART_TOL).map_err(|e| e.to_string())?;
    check(
        r.item_i && r.item_ii && r.max_roundtrip_error <= CHART_ROUNDTRIP_TOL && hr.item_ii,
        format!(
            "circles transverse {:.1e}, sensitivity {:.1e}, round trip {:.1e} <= {CHART_ROUNDTRIP_TOL:e}; heisenberg sensitivity {:.1e} <= {CHART_TOL:e}",
            r.max_transverse, r.max_drift_sensitivity, r.max_roundtrip_error, hr.max_drift_sensitivity
        ),
    )
}

fn ad_field(v: VectorField, y: VectorField, t: f64) -> impl Field {
    let cfg = FlowConfig::with_dt(DT);
    FnField::new(v.dim(), move |p: &[f64], o: &mut [f64]| match adjoint_push(&v, &y, t, p, &cfg) {
        Ok(a) => o.copy_from_slice(&a.value),
        Err(_) => o.fill(f64::NAN),
    })
}

fn c11_ad() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let cfg = FlowConfig::with_dt(DT);
    let mut self_worst = 0.0f64;
    let mut hom_worst = 0.0f64;
    for name in catalog::names() {
        let e = CatalogEntry::default_for(name).map_err(|e| e.to_string())?;
        let f = e.system.fields();
        let (v, u) = (&f[0], &f[1]);
        let w = f.get(2).unwrap_or(&f[0]);
        let uw = lie_bracket(u, w).unwrap();
        for _ in 0..AD_POINTS {
            let t = rng.gen_range(-0.5..0.5);
            let x = random_point(&mut rng, &e.domain);
            let ad = adjoint_push(v, v, t, &x, &cfg).map_err(|err| format!("{name}: {err}"))?;
            let s = rel_err(&ad.value, &v.eval_vec(&x));
            self_worst = self_worst.max(s);
            let lhs = numeric_bracket(&ad_field(v.clone(), u.clone(), t), &ad_field(v.clone(), w.clone(), t), &x);
            let rhs = adjoint_push(v, &uw, t, &x, &cfg).map_err(|err| format!("{name}: {err}"))?.value;
            let h = rel_err(&lhs, &rhs);
            hom_worst = hom_worst.max(h);
            if !(s <= AD_SELF_TOL && h <= AD_HOMOMORPHISM_TOL) {
                return Err(format!("{name} at t={t:.3}, x={x:?}: self {s:e}, homomorphism {h:e}"));
            }
        }
    }
    check(
        true,
        format!("{} systems x {AD_POINTS}: Ad_tV V err {self_worst:.1e} <= {AD_SELF_TOL:e}; homomorphism err {hom_worst:.1e} <= {AD_HOMOMORPHISM_TOL:e}", catalog::names().len()),
    )
}

fn cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ufgsde"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn c12_determinism() -> Outcome {
    let commands: [&[&str]; 3] = [
        &["simulate", "--system", "random-circles", "--x0", "1,0", "--t", "1.5707963", "--paths", "200", "--seed", "42"],
        &[
            "converge", "--system", "sine-ou", "--times", "1,2", "--reference", "gaussian(0,19.7392088); none",
            "--paths", "500", "--seed", "7",
        ],
        &["malliavin", "--system", "grushin", "--param", "k=-1", "--paths", "20", "--split", "1", "--seed", "3"],
    ];
    let mut bytes = 0;
    for cmd in commands {
        let first = cli(cmd)?;
        let again = cli(cmd)?;
        let mut one = cmd.to_vec();
        one.extend(["--threads", "1"]);
        let mut four = cmd.to_vec();
        four.extend(["--threads", "4"]);
        let serial = cli(&one)?;
        let parallel = cli(&four)?;
        if first.is_empty() || first != again || first != serial || first != parallel {
            return Err(format!("`{}` output differs between runs", cmd[0]));
        }
        bytes += first.len();
    }
    check(true, format!("simulate, converge, malliavin byte-identical across reruns and --threads 1/4 ({bytes} bytes)"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("bracket identities", c1_bracket_identities),
        ("UFG checker", c2_ufg),
        ("obtuse angle condition", c3_oac),
        ("random circles", c4_random_circles),
        ("UFG-Heisenberg", c5_heisenberg),
        ("Grushin marginals and derivative", c6_grushin),
        ("sine-OU limits", c7_sine_ou),
        ("stationary Fokker-Planck", c8_fokker_planck),
        ("Malliavin block structure", c9_malliavin),
        ("charts", c10_charts),
        ("Ad identities", c11_ad),
        ("determinism", c12_determinism),
    ];
    let mut failed = 0;
    for (i, (label, f)) in criteria.iter().enumerate() {
        let start = std::time::Instant::now();
        let (tag, detail) = match std::panic::catch_unwind(f) {
            Ok(Ok(d)) => ("PASS", d),
            Ok(Err(d)) => ("FAIL", d),
            Err(_) => ("FAIL", "panicked".to_string()),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("{tag} {:>2} {label}: {detail} [{:.1}s]", i + 1, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
