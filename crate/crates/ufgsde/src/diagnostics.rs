//! Distributional and PDE-residual checks on simulated ensembles.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dynamics::{simulate_paths, splitmix64, DynamicsError, PathEnsemble, Recording, SDESystem, SimConfig};
use crate::expr::{differentiate, evaluate, simplify, Expr, ExprError, Program};
use crate::fields::{expr_add, expr_mul, Field};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("at least 2 finite samples are required, got {0}")]
    TooFewSamples(usize),
    #[error("invalid reference: {0}")]
    InvalidReference(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Sorted finite 1-D sample; at least two values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    sorted: Vec<f64>,
}

impl EmpiricalDistribution {
    /// Non-finite values are rejected rather than dropped.
    pub fn new(mut samples: Vec<f64>) -> Result<Self, DiagnosticsError> {
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(DiagnosticsError::InvalidArgument("samples must be finite".into()));
        }
        if samples.len() < 2 {
            return Err(DiagnosticsError::TooFewSamples(samples.len()));
        }
        samples.sort_by(f64::total_cmp);
        Ok(EmpiricalDistribution { sorted: samples })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// `#{x_i <= x} / n`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= x) as f64 / self.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.sorted.iter().sum::<f64>() / self.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Gaussian { mean: f64, variance: f64 },
    Dirac(f64),
    Empirical(EmpiricalDistribution),
}

impl Reference {
    pub fn label(&self) -> String {
        match self {
            Reference::Gaussian { mean, variance } => format!("gaussian({mean},{variance})"),
            Reference::Dirac(a) => format!("dirac({a})"),
            Reference::Empirical(e) => format!("empirical(n={})", e.len()),
        }
    }
}

/// Distance between the empirical law of `samples` and `reference`, in
/// `[0, 1]`. Gaussian and empirical references use the Kolmogorov-Smirnov
/// sup-norm. A Dirac reference uses the Levy distance
/// `inf { e : P_n(X < a - e) <= e and P_n(X > a + e) <= e }`, since the
/// sup-norm against a step does not shrink for continuous laws converging
/// to it.
pub fn ks_distance(samples: &[f64], reference: &Reference) -> Result<f64, DiagnosticsError> {
    let emp = EmpiricalDistribution::new(samples.to_vec())?;
    let n = emp.len() as f64;
    match reference {
        Reference::Gaussian { mean, variance } => {
            if !(*variance > 0.0) || !mean.is_finite() || !variance.is_finite() {
                return Err(DiagnosticsError::InvalidReference(format!(
                    "gaussian needs a finite mean and positive variance, got ({mean}, {variance})"
                )));
            }
            let dist = Normal::new(*mean, variance.sqrt())
                .map_err(|e| DiagnosticsError::InvalidReference(e.to_string()))?;
            Ok(emp.samples().iter().enumerate().fold(0.0, |d, (i, &x)| {
                let f = dist.cdf(x);
                d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
            }))
        }
        Reference::Dirac(a) => {
            if !a.is_finite() {
                return Err(DiagnosticsError::InvalidReference(format!("dirac location {a}")));
            }
            let below: Vec<f64> = emp.samples().iter().filter(|x| **x < *a).map(|x| a - x).collect();
            let above: Vec<f64> = emp.samples().iter().rev().filter(|x| **x > *a).map(|x| x - a).collect();
            Ok(levy_side(&below, n).max(levy_side(&above, n)))
        }
        Reference::Empirical(other) => {
            let (a, b) = (emp.samples(), other.samples());
            let (na, nb) = (a.len() as f64, b.len() as f64);
            let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
            while i < a.len() && j < b.len() {
                let x = a[i].min(b[j]);
                while i < a.len() && a[i] <= x {
                    i += 1;
                }
                while j < b.len() && b[j] <= x {
                    j += 1;
                }
                d = d.max((i as f64 / na - j as f64 / nb).abs());
            }
            Ok(d)
        }
    }
}

/// `inf { e : #{d_i > e} / n <= e }` for deviations sorted descending.
fn levy_side(desc: &[f64], n: f64) -> f64 {
    (0..=desc.len())
        .map(|j| (j as f64 / n).max(desc.get(j).copied().unwrap_or(0.0)))
        .fold(f64::INFINITY, f64::min)
}

fn simulate_at(
    system: &SDESystem,
    x0: &[f64],
    times: &[f64],
    n_paths: usize,
    seed: u64,
    dt: f64,
) -> Result<PathEnsemble, DiagnosticsError> {
    if times.is_empty() || times.iter().any(|t| !(*t > 0.0)) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DiagnosticsError::InvalidArgument(
            "times must be positive and strictly increasing".into(),
        ));
    }
    let t_end = *times.last().expect("non-empty");
    let mut cfg = SimConfig::new(t_end, dt, n_paths, seed);
    let mut steps: Vec<usize> = times.iter().map(|&t| cfg.nearest_step(t)).collect();
    steps.dedup();
    if steps.len() != times.len() || steps[0] == 0 {
        return Err(DiagnosticsError::InvalidArgument(format!(
            "times closer than the step {dt} cannot be resolved"
        )));
    }
    cfg.recording = Recording::Steps(steps);
    cfg.store_increments = false;
    Ok(simulate_paths(system, x0, &cfg)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub times: Vec<f64>,
    /// One entry per coordinate; `None` skips that coordinate.
    pub references: Vec<Option<Reference>>,
    pub n_paths: usize,
    pub seed: u64,
    pub dt: f64,
    pub escape_radius: f64,
    /// Bound on the distance at the last time, when given.
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSeries {
    pub coordinate: usize,
    pub reference: String,
    /// Distance to the reference per time; NaN when fewer than two paths
    /// remain finite.
    pub ks: Vec<f64>,
    /// `-slope` of the least-squares fit of `ln ks` against time.
    pub decay_rate: Option<f64>,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub dt: f64,
    pub escape_radius: f64,
    /// Fraction of paths with `|X_t| > R` or blown up; a proxy for loss of
    /// tightness, not a proof of it.
    pub escape_fraction: Vec<f64>,
    pub coordinates: Vec<CoordinateSeries>,
    pub tolerance: Option<f64>,
}

impl ConvergenceReport {
    /// Rows `time,coordinate,ks,escape_fraction`; coordinates are 1-based.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,coordinate,ks,escape_fraction")?;
        for (k, t) in self.times.iter().enumerate() {
            for c in &self.coordinates {
                writeln!(w, "{t},{},{},{}", c.coordinate + 1, c.ks[k], self.escape_fraction[k])?;
            }
        }
        Ok(())
    }
}

fn decay_rate(times: &[f64], values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mv)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}

/// Simulates once and compares each referenced coordinate's marginal with
/// its reference at every time, alongside the escape fraction.
pub fn convergence_study(
    system: &SDESystem,
    x0: &[f64],
    cfg: &ConvergenceConfig,
) -> Result<ConvergenceReport, DiagnosticsError> {
    if cfg.references.len() != system.dim() {
        return Err(DiagnosticsError::InvalidArgument(format!(
            "{} references for a {}-dimensional system",
            cfg.references.len(),
            system.dim()
        )));
    }
    if !(cfg.escape_radius > 0.0) {
        return Err(DiagnosticsError::InvalidArgument("escape radius must be positive".into()));
    }
    let ens = simulate_at(system, x0, &cfg.times, cfg.n_paths, cfg.seed, cfg.dt)?;
    let times: Vec<f64> = ens.times[1..].to_vec();
    let escape_fraction = (1..ens.n_times())
        .map(|k| {
            let out = (0..ens.n_paths)
                .filter(|&p| {
                    let x = ens.state(p, k);
                    !(linalg::norm(x) <= cfg.escape_radius)
                })
                .count();
            out as f64 / ens.n_paths as f64
        })
        .collect();
    let mut coordinates = Vec::new();
    for (c, reference) in cfg.references.iter().enumerate() {
        let Some(reference) = reference else { continue };
        let ks: Vec<f64> = (1..ens.n_times())
            .map(|k| match ks_distance(&ens.coordinate_samples(k, c), reference) {
                Ok(v) => Ok(v),
                Err(DiagnosticsError::TooFewSamples(_)) => Ok(f64::NAN),
                Err(e) => Err(e),
            })
            .collect::<Result<_, _>>()?;
        let pass = cfg.tolerance.map(|tol| ks.last().is_some_and(|v| *v <= tol));
        coordinates.push(CoordinateSeries {
            coordinate: c,
            reference: reference.label(),
            decay_rate: decay_rate(&times, &ks),
            ks,
            pass,
        });
    }
    Ok(ConvergenceReport {
        times,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        dt: cfg.dt,
        escape_radius: cfg.escape_radius,
        escape_fraction,
        coordinates,
        tolerance: cfg.tolerance,
    })
}

/// Paired Monte Carlo summary: mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    /// Samples used after discarding non-finite ones.
    pub samples: usize,
}

fn mean_stderr(v: &[f64]) -> Estimate {
    let n = v.len();
    if n == 0 {
        return Estimate { value: f64::NAN, stderr: f64::NAN, samples: 0 };
    }
    let m = v.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        f64::NAN
    };
    Estimate { value: m, stderr: (var / n as f64).sqrt(), samples: n }
}

fn observe(ens: &PathEnsemble, f: &Program, k: usize) -> Vec<f64> {
    (0..ens.n_paths)
        .map(|p| {
            let x = ens.state(p, k);
            if x.iter().all(|v| v.is_finite()) {
                f.eval(x)
            } else {
                f64::NAN
            }
        })
        .collect()
}

fn paired(a: &[f64], b: &[f64], scale: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * scale)
        .filter(|d| d.is_finite())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingPoint {
    pub time: f64,
    /// `P_t f(x) - P_t f(y)` from common random numbers.
    pub difference: Estimate,
}

/// `|P_t f(x) - P_t f(y)|` for two starting points driven by the same
/// Brownian paths. `x` and `y` are assumed to lie on one leaf.
#[allow(clippy::too_many_arguments)]
pub fn same_leaf_coupling(
    system: &SDESystem,
    x: &[f64],
    y: &[f64],
    f: &Expr,
    times: &[f64],
    n_paths: usize,
    seed: u64,
    dt: f64,
) -> Result<Vec<CouplingPoint>, DiagnosticsError> {
    let prog = Program::compile(f);
    let ex = simulate_at(system, x, times, n_paths, seed, dt)?;
    let ey = simulate_at(system, y, times, n_paths, seed, dt)?;
    Ok((1..ex.n_times())
        .map(|k| CouplingPoint {
            time: ex.times[k],
            difference: mean_stderr(&paired(&observe(&ex, &prog, k), &observe(&ey, &prog, k), 1.0)),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeOptions {
    pub n_paths: usize,
    pub seed: u64,
    pub dt: f64,
    /// Defaults to `1e-3 (1 + |x|)`.
    pub h: Option<f64>,
    /// Share Brownian increments between the two evaluation points.
    pub common_random_numbers: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEstimate {
    pub time: f64,
    pub estimate: Estimate,
    pub h: f64,
    pub direction_norm: f64,
}

/// `W P_t f(x)` for the field `W` by central differences along the unit
/// vector `u = W(x)/|W(x)|`, scaled by `|W(x)|`.
pub fn semigroup_derivative(
    system: &SDESystem,
    f: &Expr,
    direction: &dyn Field,
    x: &[f64],
    times: &[f64],
    opts: &DerivativeOptions,
) -> Result<Vec<DerivativeEstimate>, DiagnosticsError> {
    if direction.dim() != x.len() || x.len() != system.dim() {
        return Err(DiagnosticsError::InvalidArgument("direction, point and system dimensions differ".into()));
    }
    let w = direction.eval_vec(x);
    let norm = linalg::norm(&w);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(DiagnosticsError::InvalidArgument(format!("direction field vanishes at {x:?}")));
    }
    let h = opts.h.unwrap_or(1e-3 * (1.0 + linalg::norm(x)));
    if !(h > 0.0) {
        return Err(DiagnosticsError::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let plus: Vec<f64> = x.iter().zip(&w).map(|(xi, wi)| xi + h * wi / norm).collect();
    let minus: Vec<f64> = x.iter().zip(&w).map(|(xi, wi)| xi - h * wi / norm).collect();
    let seed_minus = if opts.common_random_numbers {
        opts.seed
    } else {
        splitmix64(opts.seed ^ 0x5E_ED0F_D1FF)
    };
    let prog = Program::compile(f);
    let ep = simulate_at(system, &plus, times, opts.n_paths, opts.seed, opts.dt)?;
    let em = simulate_at(system, &minus, times, opts.n_paths, seed_minus, opts.dt)?;
    let scale = norm / (2.0 * h);
    Ok((1..ep.n_times())
        .map(|k| {
            let fp = observe(&ep, &prog, k);
            let fm = observe(&em, &prog, k);
            let estimate = if opts.common_random_numbers {
                mean_stderr(&paired(&fp, &fm, scale))
            } else {
                let a = mean_stderr(&fp.iter().copied().filter(|v| v.is_finite()).collect::<Vec<_>>());
                let b = mean_stderr(&fm.iter().copied().filter(|v| v.is_finite()).collect::<Vec<_>>());
                Estimate {
                    value: (a.value - b.value) * scale,
                    stderr: (a.stderr.powi(2) + b.stderr.powi(2)).sqrt() * scale,
                    samples: a.samples.min(b.samples),
                }
            };
            DerivativeEstimate { time: ep.times[k], estimate, h, direction_norm: norm }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FokkerPlanckResidual {
    pub max_abs: f64,
    /// `(x, L* rho (x))` at every evaluable grid point.
    pub profile: Vec<[f64; 2]>,
    /// Grid points where `rho` or the residual could not be evaluated.
    pub skipped: Vec<f64>,
}

/// Symbolic `L* rho = -(V0 rho)' + sum_i (Vi (Vi rho)')'` for a
/// one-dimensional system, evaluated on `grid`.
pub fn fokker_planck_operator(system: &SDESystem, rho: &Expr) -> Result<Expr, DiagnosticsError> {
    if system.dim() != 1 {
        return Err(DiagnosticsError::InvalidArgument(format!(
            "the stationary residual needs a one-dimensional system, got dimension {}",
            system.dim()
        )));
    }
    let d = |e: Expr| simplify(&differentiate(&e, 0));
    let v0 = system.drift.components()[0].clone();
    let mut flux = expr_mul(Expr::constant(-1.0), expr_mul(v0, rho.clone()));
    for v in &system.noise {
        let vi = v.components()[0].clone();
        let inner = d(expr_mul(vi.clone(), rho.clone()));
        flux = expr_add(flux, expr_mul(vi, inner));
    }
    Ok(simplify(&d(flux)))
}

pub fn fokker_planck_residual(
    system: &SDESystem,
    rho: &Expr,
    grid: &[f64],
) -> Result<FokkerPlanckResidual, DiagnosticsError> {
    let op = fokker_planck_operator(system, rho)?;
    let mut out = FokkerPlanckResidual { max_abs: 0.0, profile: Vec::new(), skipped: Vec::new() };
    for &x in grid {
        match evaluate(rho, &[x]).and_then(|_| evaluate(&op, &[x])) {
            Ok(r) => {
                out.max_abs = out.max_abs.max(r.abs());
                out.profile.push([x, r]);
            }
            Err(_) => out.skipped.push(x),
        }
    }
    if out.profile.is_empty() {
        out.max_abs = f64::NAN;
    }
    Ok(out)
}
