use std::collections::BTreeMap;

use serde_json::{json, Value};

use ufgsde::catalog::{self, CatalogEntry};
use ufgsde::diagnostics::{
    convergence_study, fokker_planck_residual, semigroup_derivative, ConvergenceConfig, DerivativeOptions,
};
use ufgsde::dynamics::{auxiliary_process, rank_along_path, simulate_paths, FlowConfig, PathEnsemble, Recording, SimConfig};
use ufgsde::expr::{parse_expression, Program};
use ufgsde::fields::Field;
use ufgsde::geometry::{
    build_chart, chart_samples, check_hormander, check_kalman, check_lyapunov, check_oac, check_oac2, check_ufg,
    decompose_drift, ConditionReport, HormanderVariant, LyapunovOptions, NewtonConfig, SamplePlan, Verdict,
};
use ufgsde::io::{format_system_file, parse_grid, parse_number, parse_point, parse_references, parse_times};
use ufgsde::linalg;
use ufgsde::malliavin::{block_and_rank_check, malliavin_matrix, simulate_variational_paths, MatrixData};

use crate::report::{usage, CliError, Metadata, Report, EXIT_NUMERIC, EXIT_PASS, EXIT_VIOLATED};
use crate::system::{load, parse_params, read_points, Loaded};
use crate::{
    CatalogAction, ChartArgs, CheckArgs, Cli, Command, Condition, ConvergeArgs, DecomposeArgs, DerivativeArgs,
    FpArgs, MalliavinArgs, Outcome, PathArgs, DEFAULT_GRID,
};

pub(crate) fn name(c: &Command) -> &'static str {
    match c {
        Command::Catalog { .. } => "catalog",
        Command::Check(_) => "check",
        Command::Decompose(_) => "decompose",
        Command::Chart(_) => "chart",
        Command::Simulate { .. } => "simulate",
        Command::Zproc { .. } => "zproc",
        Command::Ranks { .. } => "ranks",
        Command::Malliavin(_) => "malliavin",
        Command::Converge(_) => "converge",
        Command::Fpresidual(_) => "fpresidual",
        Command::Derivative(_) => "derivative",
    }
}

/// Commands whose `--out` carries a JSON report rather than CSV or text.
pub(crate) fn emits_report(c: &Command) -> bool {
    !matches!(
        c,
        Command::Simulate { .. } | Command::Zproc { .. } | Command::Catalog { .. }
    )
}

pub(crate) fn metadata(cli: &Cli, extra: BTreeMap<String, Value>) -> Metadata {
    let (grid, sweep) = match &cli.command {
        Command::Check(a) => (json!(a.grid), a.lambda0_sweep.is_some()),
        Command::Decompose(a) if a.points.is_none() => (json!(a.grid), false),
        Command::Fpresidual(FpArgs { grid: Some(g), .. }) => (json!(g), false),
        _ => (json!(DEFAULT_GRID), false),
    };
    Metadata {
        seed: cli.seed,
        dt: cli.dt,
        grid,
        rtol: cli.rtol,
        lambda0_sweep: sweep,
        extra,
    }
}

pub(crate) fn dispatch(cli: &Cli) -> Result<Outcome, CliError> {
    if !(cli.dt > 0.0 && cli.dt.is_finite()) {
        return Err(usage(format!("--dt must be positive, got {}", cli.dt)));
    }
    if !(cli.rtol > 0.0 && cli.rtol < 1.0) {
        return Err(usage(format!("--rtol must lie in (0, 1), got {}", cli.rtol)));
    }
    match &cli.command {
        Command::Catalog { action } => catalog_cmd(action),
        Command::Check(a) => check(cli, a),
        Command::Decompose(a) => decompose(cli, a),
        Command::Chart(a) => chart(cli, a),
        Command::Simulate { sys, path, report } => simulate(cli, &load(sys)?, path, report.as_deref()),
        Command::Zproc { sys, path, level, report } => zproc(cli, &load(sys)?, path, *level, report.as_deref()),
        Command::Ranks { sys, path, level } => ranks(cli, &load(sys)?, path, *level),
        Command::Malliavin(a) => malliavin(cli, a),
        Command::Converge(a) => converge(cli, a),
        Command::Fpresidual(a) => fpresidual(cli, a),
        Command::Derivative(a) => derivative(cli, a),
    }
}

fn finish(report: Report) -> Outcome {
    let code = if report.verdict == "pass" || report.verdict == Verdict::SatisfiedOnSamples.to_string() {
        EXIT_PASS
    } else {
        EXIT_VIOLATED
    };
    Outcome {
        bytes: report.to_json().into_bytes(),
        code,
    }
}

fn base_report(cli: &Cli, loaded: &Loaded, extra: BTreeMap<String, Value>) -> Report {
    let mut r = Report::new(name(&cli.command), metadata(cli, extra));
    r.system = Some(loaded.label.clone());
    r.params = loaded.params();
    r
}

fn extra(items: &[(&str, Value)]) -> BTreeMap<String, Value> {
    items.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

fn entry_json(e: &CatalogEntry) -> Value {
    let vars = &e.system.variables;
    json!({
        "name": e.name,
        "description": e.description,
        "variables": vars,
        "params": e.system.params,
        "param_ranges": e.param_ranges.iter().map(|r| json!({"name": r.name, "lo": r.lo, "hi": r.hi, "default": r.default})).collect::<Vec<_>>(),
        "fields": e.system.fields().iter().map(|f| f.to_strings(vars)).collect::<Vec<_>>(),
        "level": e.level,
        "domain": e.domain,
        "x0": e.x0,
        "identities": e.identities.iter().map(|i| i.label.clone()).collect::<Vec<_>>(),
        "v0_perp": e.v0_perp.as_ref().map(|v| v.to_strings(vars)),
        "ranks": e.ranks.iter().map(|r| json!({"point": r.point, "subset": format!("{:?}", r.subset), "rank": r.rank})).collect::<Vec<_>>(),
        "facts": e.facts,
        "lambda0": e.lambda0,
        "density": e.density.as_ref().map(|d| json!({"expr": d.text, "interval": [d.interval.0, d.interval.1], "normalization": d.normalization, "normalization_error": d.normalization_error})),
        "lyapunov": e.lyapunov.as_ref().map(|l| json!({"phi": l.text, "c1": l.c1, "c2": l.c2, "ode_block": l.ode_block})),
        "load_check": {"points": e.load_check.points, "identity_error": e.load_check.identity_error, "v0_perp_error": e.load_check.v0_perp_error},
    })
}

fn catalog_cmd(action: &CatalogAction) -> Result<Outcome, CliError> {
    let text = match action {
        CatalogAction::List => {
            let mut s = String::new();
            for n in catalog::names() {
                let e = CatalogEntry::default_for(n)?;
                s.push_str(&format!(
                    "{n}\tdim={}\tnoise={}\tlevel={}\t{}\n",
                    e.system.dim(),
                    e.system.noise_count(),
                    e.level,
                    e.description
                ));
            }
            s
        }
        CatalogAction::Show { name, params, export } => {
            let e = catalog::get(name, &parse_params(params)?)?;
            if *export {
                format_system_file(&e.system)
            } else {
                let mut s = serde_json::to_string_pretty(&entry_json(&e)).expect("entry serializes");
                s.push('\n');
                s
            }
        }
    };
    Ok(Outcome {
        bytes: text.into_bytes(),
        code: EXIT_PASS,
    })
}

fn apply_condition(report: &mut Report, c: &ConditionReport) {
    report.verdict = c.verdict.to_string();
    report.worst_point = c.worst_point.clone();
    report.records = to_value(&c.records);
    report.summary = Some(json!({
        "condition": c.condition,
        "level": c.level,
        "lambda0": c.lambda0,
        "tolerance": c.tolerance,
        "blowup_threshold": c.blowup_threshold,
        "max_residual": c.max_residual(),
        "max_coefficient": c.max_coefficient(),
        "certified_lambda0": c.certified_lambda0,
        "singular_points": c.singular_points,
        "skipped": c.skipped,
    }));
}

/// `A` and `Q = [V1(0) .. Vd(0)]` of an affine system with constant noise.
fn affine_parts(loaded: &Loaded, bounds: &[(f64, f64)]) -> Result<(nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>), CliError> {
    let sys = &loaded.system;
    let n = sys.dim();
    let origin = vec![0.0; n];
    let a = sys.drift.eval_jacobian(&origin);
    let probe: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.37 * lo + 0.63 * hi + 0.1).collect();
    if (sys.drift.eval_jacobian(&probe) - &a).amax() > 1e-12 * (1.0 + a.amax()) {
        return Err(usage("the Kalman test needs an affine drift"));
    }
    let mut q = nalgebra::DMatrix::zeros(n, sys.noise_count());
    for (j, v) in sys.noise.iter().enumerate() {
        if v.eval_jacobian(&probe).amax() > 0.0 || v.eval_jacobian(&origin).amax() > 0.0 {
            return Err(usage("the Kalman test needs constant noise fields"));
        }
        q.column_mut(j).copy_from_slice(&v.eval_vec(&origin));
    }
    Ok((a, q))
}

fn check(cli: &Cli, a: &CheckArgs) -> Result<Outcome, CliError> {
    let loaded = load(&a.sys)?;
    let level = loaded.level(a.level)?;
    let bounds = loaded.domain(a.bounds.as_deref())?;
    let plan = SamplePlan::grid(bounds.clone(), a.grid)?;
    let needs_lambda = matches!(a.condition, Condition::Oac | Condition::Oac2);
    let lambda0 = match (a.lambda0, loaded.entry.as_ref().and_then(|e| e.lambda0)) {
        (Some(l), _) | (None, Some(l)) => Some(l),
        (None, None) if needs_lambda => return Err(usage("--lambda0 is required for this condition")),
        _ => None,
    };
    let mut report = base_report(
        cli,
        &loaded,
        extra(&[
            ("condition", json!(format!("{:?}", a.condition).to_lowercase())),
            ("level", json!(level)),
            ("lambda0", json!(lambda0)),
            ("box", json!(bounds)),
            ("tol", json!(a.tol)),
        ]),
    );
    match a.condition {
        Condition::Ufg => {
            let r = check_ufg(&loaded.table(level)?, &plan, level, a.tol, a.blowup, cli.rtol)?;
            apply_condition(&mut report, &r);
        }
        Condition::Hc | Condition::Phc => {
            let variant = if a.condition == Condition::Hc { HormanderVariant::Hc } else { HormanderVariant::Phc };
            let r = check_hormander(&loaded.table(level)?, &plan, variant, cli.rtol)?;
            apply_condition(&mut report, &r);
        }
        Condition::Oac | Condition::Oac2 => {
            let table = loaded.table(level)?;
            let run = |l: f64| {
                if a.condition == Condition::Oac {
                    check_oac(&table, &plan, l, a.tol)
                } else {
                    check_oac2(&table, &plan, l, a.tol)
                }
            };
            let r = run(lambda0.expect("required above"))?;
            apply_condition(&mut report, &r);
            if let Some(list) = &a.lambda0_sweep {
                let mut sweep = Vec::new();
                for l in parse_point(list)? {
                    let s = run(l)?;
                    sweep.push(json!({"lambda0": l, "verdict": s.verdict, "max_residual": s.max_residual()}));
                }
                if let Some(Value::Object(m)) = report.summary.as_mut() {
                    m.insert("lambda0_sweep".into(), Value::Array(sweep));
                }
            }
        }
        Condition::Kalman => {
            let (am, q) = affine_parts(&loaded, &bounds)?;
            let (ok, rank) = check_kalman(&am, &q, cli.rtol)?;
            report.verdict = if ok { Verdict::SatisfiedOnSamples } else { Verdict::Violated }.to_string();
            report.records = json!([{"rank": rank, "dim": loaded.system.dim()}]);
        }
        Condition::Lyapunov => {
            let cert = loaded.entry.as_ref().and_then(|e| e.lyapunov.clone());
            let phi = match (&a.phi, &cert) {
                (Some(p), _) => parse_expression(p, &loaded.system.variables)?,
                (None, Some(c)) => c.phi.clone(),
                (None, None) => return Err(usage("--phi is required without a catalog certificate")),
            };
            let c1 = a.c1.or(cert.as_ref().map(|c| c.c1)).ok_or_else(|| usage("--c1 is required"))?;
            let c2 = a.c2.or(cert.as_ref().map(|c| c.c2)).ok_or_else(|| usage("--c2 is required"))?;
            let options = LyapunovOptions {
                ode_block: cert.as_ref().and_then(|c| c.ode_block),
                times: std::iter::once(0.0).chain(parse_times(&a.ode_times)?).collect(),
                tol: a.tol,
                flow: FlowConfig::with_dt(cli.dt),
            };
            let r = check_lyapunov(&loaded.system, &phi, &plan, c1, c2, &options)?;
            apply_condition(&mut report, &r);
        }
    }
    Ok(finish(report))
}

fn decompose(cli: &Cli, a: &DecomposeArgs) -> Result<Outcome, CliError> {
    let loaded = load(&a.sys)?;
    let level = loaded.level(a.level)?;
    let table = loaded.table(level)?;
    let points = match &a.points {
        Some(path) => read_points(path)?,
        None => SamplePlan::grid(loaded.domain(a.bounds.as_deref())?, a.grid)?.points(),
    };
    let reference = loaded.entry.as_ref().and_then(|e| e.v0_perp.clone());
    let mut records = Vec::with_capacity(points.len());
    let mut worst: Option<(f64, Vec<f64>)> = None;
    let mut violated = false;
    for p in &points {
        if p.len() != loaded.system.dim() {
            return Err(usage(format!("point {p:?} does not match dimension {}", loaded.system.dim())));
        }
        let d = decompose_drift(&table, p, cli.rtol)?;
        let v0 = loaded.system.drift.eval_vec(p);
        let ref_err = reference.as_ref().map(|r| {
            let want = r.eval_vec(p);
            let diff: Vec<f64> = want.iter().zip(&d.perpendicular).map(|(x, y)| x - y).collect();
            linalg::norm(&diff) / (1.0 + linalg::norm(&v0))
        });
        let score = d.residual.max(ref_err.unwrap_or(0.0));
        violated |= !(score <= a.tol);
        if worst.as_ref().is_none_or(|(s, _)| score > *s) {
            worst = Some((score, p.clone()));
        }
        records.push(json!({
            "point": p,
            "parallel": d.parallel,
            "perpendicular": d.perpendicular,
            "residual": d.residual,
            "reference_error": ref_err,
        }));
    }
    let mut report = base_report(cli, &loaded, extra(&[("level", json!(level)), ("tol", json!(a.tol))]));
    report.verdict = if violated { "violated" } else { "pass" }.into();
    report.worst_point = worst.map(|w| w.1);
    report.records = Value::Array(records);
    Ok(finish(report))
}

fn chart(cli: &Cli, a: &ChartArgs) -> Result<Outcome, CliError> {
    let loaded = load(&a.sys)?;
    let level = loaded.level(a.level)?;
    let table = loaded.table(level)?;
    let x0 = loaded.x0(a.x0.as_deref())?;
    let c = build_chart(&table, &x0, a.eps, cli.rtol, NewtonConfig::default(), FlowConfig::with_dt(cli.dt))?;
    let samples = chart_samples(&c, a.samples, a.shrink, cli.seed);
    let r = ufgsde::geometry::verify_chart_structure(&c, &table, &samples, a.fd_step, a.tol)?;
    let roundtrip_ok = r.max_roundtrip_error <= a.roundtrip_tol;
    let mut report = base_report(
        cli,
        &loaded,
        extra(&[
            ("x0", json!(x0)),
            ("eps", json!(a.eps)),
            ("samples", json!(a.samples)),
            ("fd_step", json!(a.fd_step)),
            ("tol", json!(a.tol)),
            ("roundtrip_tol", json!(a.roundtrip_tol)),
        ]),
    );
    report.verdict = if r.item_i && r.item_ii && roundtrip_ok { "pass" } else { "violated" }.into();
    report.summary = Some(json!({
        "directions": c.directions.iter().map(|d| d.label()).collect::<Vec<_>>(),
        "leaf_dimension": c.n,
        "roundtrip_ok": roundtrip_ok,
    }));
    report.records = json!([r]);
    Ok(finish(report))
}

fn sim_config(cli: &Cli, p: &PathArgs, store_increments: bool) -> Result<SimConfig, CliError> {
    if p.stride == 0 {
        return Err(usage("--stride must be positive"));
    }
    let mut cfg = SimConfig::new(parse_number(&p.t)?, cli.dt, p.paths, cli.seed);
    cfg.recording = Recording::Stride(p.stride);
    cfg.store_increments = store_increments;
    Ok(cfg)
}

fn ensemble_csv(e: &PathEnsemble) -> Vec<u8> {
    let mut buf = Vec::new();
    e.write_csv(&mut buf).expect("writing to memory cannot fail");
    buf
}

fn blowup_code(e: &PathEnsemble) -> i32 {
    if e.blow_up_count() > 0 {
        EXIT_NUMERIC
    } else {
        EXIT_PASS
    }
}

fn side_report(cli: &Cli, loaded: &Loaded, e: &PathEnsemble, summary: Value, path: Option<&str>) -> Result<(), CliError> {
    let Some(path) = path else { return Ok(()) };
    let mut r = base_report(
        cli,
        loaded,
        extra(&[("paths", json!(e.n_paths)), ("t_end", json!(e.times.last()))]),
    );
    r.verdict = if e.blow_up_count() > 0 { "blow_up" } else { "pass" }.into();
    r.summary = Some(summary);
    crate::report::write_out(path, r.to_json().as_bytes())
}

fn simulate(cli: &Cli, loaded: &Loaded, p: &PathArgs, report: Option<&str>) -> Result<Outcome, CliError> {
    let x0 = loaded.x0(p.x0.as_deref())?;
    let e = simulate_paths(&loaded.system, &x0, &sim_config(cli, p, false)?)?;
    side_report(cli, loaded, &e, json!({"x0": x0, "blown_up": e.blow_up_count(), "stored_times": e.n_times()}), report)?;
    Ok(Outcome {
        bytes: ensemble_csv(&e),
        code: blowup_code(&e),
    })
}

/// Per-coordinate `max |.|` over finite entries of all paths and times.
fn coordinate_max_abs(e: &PathEnsemble) -> Vec<f64> {
    (0..e.dim)
        .map(|c| {
            (0..e.n_times())
                .flat_map(|k| e.coordinate_samples(k, c))
                .filter(|v| v.is_finite())
                .fold(0.0, |m: f64, v| m.max(v.abs()))
        })
        .collect()
}

fn zproc(cli: &Cli, loaded: &Loaded, p: &PathArgs, level: Option<usize>, report: Option<&str>) -> Result<Outcome, CliError> {
    let x0 = loaded.x0(p.x0.as_deref())?;
    let level = loaded.level(level)?;
    let e = simulate_paths(&loaded.system, &x0, &sim_config(cli, p, false)?)?;
    let v = loaded.v0_perp(level, cli.rtol)?;
    let z = auxiliary_process(&e, &*v, &FlowConfig::with_dt(cli.dt))?;
    side_report(
        cli,
        loaded,
        &z,
        json!({"x0": x0, "blown_up": z.blow_up_count(), "max_abs": coordinate_max_abs(&z)}),
        report,
    )?;
    Ok(Outcome {
        bytes: ensemble_csv(&z),
        code: blowup_code(&z),
    })
}

fn ranks(cli: &Cli, loaded: &Loaded, p: &PathArgs, level: Option<usize>) -> Result<Outcome, CliError> {
    let x0 = loaded.x0(p.x0.as_deref())?;
    let level = loaded.level(level)?;
    let table = loaded.table(level)?;
    let e = simulate_paths(&loaded.system, &x0, &sim_config(cli, p, false)?)?;
    let mut records = Vec::with_capacity(e.n_paths);
    let mut all_monotone = true;
    let mut first_bad: Option<Vec<f64>> = None;
    for path in 0..e.n_paths {
        let profile = rank_along_path(&e, path, &table, cli.rtol);
        let monotone = profile.windows(2).all(|w| w[1].1 <= w[0].1);
        if !monotone && first_bad.is_none() {
            first_bad = Some(x0.clone());
        }
        all_monotone &= monotone;
        let mut changes: Vec<(f64, usize)> = Vec::new();
        for &(t, r) in &profile {
            if changes.last().is_none_or(|&(_, last)| last != r) {
                changes.push((t, r));
            }
        }
        records.push(json!({"path": path, "changes": changes, "non_increasing": monotone}));
    }
    let mut report = base_report(
        cli,
        loaded,
        extra(&[("x0", json!(x0)), ("level", json!(level)), ("paths", json!(p.paths)), ("stride", json!(p.stride))]),
    );
    report.verdict = if all_monotone { "pass" } else { "violated" }.into();
    report.worst_point = first_bad;
    report.records = Value::Array(records);
    report.summary = Some(json!({"blown_up": e.blow_up_count()}));
    Ok(finish(report))
}

fn malliavin(cli: &Cli, a: &MalliavinArgs) -> Result<Outcome, CliError> {
    let loaded = load(&a.sys)?;
    let x0 = loaded.x0(a.path.x0.as_deref())?;
    let split = a.split.unwrap_or(loaded.system.dim());
    let cfg = sim_config(cli, &a.path, false)?;
    let paths = simulate_variational_paths(&loaded.system, &x0, &cfg);
    let n = loaded.system.dim();
    let mut mean = nalgebra::DMatrix::zeros(n, n);
    let mut ok_paths = 0usize;
    let mut failures = 0usize;
    let mut holds = true;
    let mut records = Vec::with_capacity(paths.len());
    for (p, res) in paths.into_iter().enumerate() {
        match res {
            Ok(vp) => {
                let m = malliavin_matrix(&vp, &loaded.system);
                let r = block_and_rank_check(&m, split, a.block_tol, a.cond)?;
                holds &= r.block_holds && r.upper_invertible;
                mean += &m;
                ok_paths += 1;
                records.push(json!({"path": p, "report": r, "max_inverse_error": vp.max_inverse_error}));
            }
            Err(e) => {
                failures += 1;
                records.push(json!({"path": p, "error": e.to_string()}));
            }
        }
    }
    if ok_paths > 0 {
        mean /= ok_paths as f64;
    }
    let mut report = base_report(
        cli,
        &loaded,
        extra(&[
            ("x0", json!(x0)),
            ("t_end", json!(cfg.t_end)),
            ("paths", json!(cfg.n_paths)),
            ("split", json!(split)),
            ("block_tol", json!(a.block_tol)),
            ("cond_threshold", json!(a.cond)),
        ]),
    );
    report.verdict = if failures > 0 {
        "numeric_failure"
    } else if holds {
        "pass"
    } else {
        "violated"
    }
    .into();
    report.records = Value::Array(records);
    report.summary = Some(json!({"mean_matrix": MatrixData::from(&mean), "failed_paths": failures}));
    let mut out = finish(report);
    if failures > 0 {
        out.code = EXIT_NUMERIC;
    }
    Ok(out)
}

fn converge(cli: &Cli, a: &ConvergeArgs) -> Result<Outcome, CliError> {
    let loaded = load(&a.sys)?;
    let x0 = loaded.x0(a.x0.as_deref())?;
    let cfg = ConvergenceConfig {
        times: parse_times(&a.times)?,
        references: parse_references(&a.reference)?,
        n_paths: a.paths,
        seed: cli.seed,
        dt: cli.dt,
        escape_radius: a.escape_radius,
        tolerance: a.tolerance,
    };
    let r = convergence_study(&loaded.system, &x0, &cfg)?;
    if let Some(path) = &a.csv {
        let mut buf = Vec::new();
        r.write_csv(&mut buf).expect("writing to memory cannot fail");
        crate::report::write_out(path, &buf)?;
    }
    let mut report = base_report(
        cli,
        &loaded,
        extra(&[
            ("x0", json!(x0)),
            ("paths", json!(a.paths)),
            ("escape_radius", json!(a.escape_radius)),
            ("tolerance", json!(a.tolerance)),
        ]),
    );
    let failed = r.coordinates.iter().any(|c| c.pass == Some(false));
    report.verdict = if failed { "violated" } else { "pass" }.into();
    report.records = to_value(&r.coordinates);
    report.summary = Some(json!({"times": r.times, "escape_fraction": r.escape_fraction}));
    Ok(finish(report))
}

fn fpresidual(cli: &Cli, a: &FpArgs) -> Result<Outcome, CliError> {
    let loaded = load(&a.sys)?;
    let density = loaded.entry.as_ref().and_then(|e| e.density.clone());
    let rho = match (&a.density, &density) {
        (Some(text), _) => parse_expression(text, &loaded.system.variables)?,
        (None, Some(d)) => d.expr.clone(),
        (None, None) => return Err(usage("--density is required without a catalog density")),
    };
    let grid = match &a.grid {
        Some(spec) => parse_grid(spec)?,
        None => {
            let dom = loaded.domain(None)?;
            let (lo, hi) = dom.first().copied().ok_or_else(|| usage("empty domain"))?;
            parse_grid(&format!("{lo}:{hi}:400"))?
        }
    };
    let r = fokker_planck_residual(&loaded.system, &rho, &grid)?;
    let mut report = base_report(
        cli,
        &loaded,
        extra(&[("tol", json!(a.tol)), ("grid_points", json!(grid.len()))]),
    );
    report.verdict = if r.max_abs <= a.tol { "pass" } else { "violated" }.into();
    report.worst_point = r
        .profile
        .iter()
        .fold(None::<[f64; 2]>, |b, p| match b {
            Some(q) if q[1].abs() >= p[1].abs() => Some(q),
            _ => Some(*p),
        })
        .map(|p| vec![p[0]]);
    report.records = to_value(&r.profile);
    report.summary = Some(json!({"max_abs": r.max_abs, "skipped": r.skipped}));
    Ok(finish(report))
}

fn derivative(cli: &Cli, a: &DerivativeArgs) -> Result<Outcome, CliError> {
    let loaded = load(&a.sys)?;
    let x0 = loaded.x0(a.x0.as_deref())?;
    let level = loaded.level(a.level)?;
    let f = parse_expression(&a.f, &loaded.system.variables)?;
    let dir = loaded.direction(&a.direction, level, cli.rtol)?;
    let times = parse_times(&a.times)?;
    let opts = DerivativeOptions {
        n_paths: a.paths,
        seed: cli.seed,
        dt: cli.dt,
        h: a.h,
        common_random_numbers: !a.independent,
    };
    let est = semigroup_derivative(&loaded.system, &f, &*dir, &x0, &times, &opts)?;
    let oracle = a.oracle.as_deref().map(|o| parse_expression(o, &["t"])).transpose()?.map(|e| Program::compile(&e));
    let mut pass = true;
    let records: Vec<Value> = est
        .iter()
        .map(|d| {
            let want = oracle.as_ref().map(|p| p.eval(&[d.time]));
            let within = want.map(|w| (d.estimate.value - w).abs() <= 3.0 * d.estimate.stderr + 1e-12);
            pass &= within.unwrap_or(true);
            json!({"estimate": d, "oracle": want, "within_3_stderr": within})
        })
        .collect();
    let mut report = base_report(
        cli,
        &loaded,
        extra(&[
            ("x0", json!(x0)),
            ("f", json!(a.f)),
            ("direction", json!(a.direction)),
            ("paths", json!(a.paths)),
            ("common_random_numbers", json!(!a.independent)),
        ]),
    );
    report.verdict = if pass { "pass" } else { "violated" }.into();
    report.records = Value::Array(records);
    Ok(finish(report))
}
