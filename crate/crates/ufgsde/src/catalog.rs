//! Built-in systems with closed-form ground truth. Every identity, drift
//! decomposition and rank fact an entry carries is re-derived from its fields
//! when the entry is built, so an entry that loads is self-consistent.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::SDESystem;
use crate::expr::{parse_expression, Expr};
use crate::fields::{build_hierarchy, lie_bracket, Field, FieldError, Subset, VectorField};
use crate::geometry::{decompose_drift, rank_at};
use crate::linalg;

/// Points drawn per entry for load-time verification.
pub const LOAD_CHECK_POINTS: usize = 20;
/// Relative tolerance of load-time identity checks.
pub const LOAD_CHECK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CatalogError {
    #[error("unknown catalog entry `{0}`; known: {}", names().join(", "))]
    UnknownName(String),
    #[error("unknown parameter `{name}` for `{entry}`")]
    UnknownParameter { entry: String, name: String },
    #[error("parameter {name} = {value} outside [{lo}, {hi}]")]
    OutOfRange { name: String, value: f64, lo: f64, hi: f64 },
    #[error("`{entry}`: {what} fails at {point:?} with error {error:e}")]
    IdentityFailed { entry: String, what: String, point: Vec<f64>, error: f64 },
    #[error("`{entry}`: expected rank {expected} at {point:?}, found {found}")]
    RankMismatch { entry: String, point: Vec<f64>, expected: usize, found: usize },
    #[error("invalid entry definition: {0}")]
    Definition(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRange {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
    pub default: f64,
}

/// `[V_left, V_right] = expected`, indices into `(V0, V1, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BracketIdentity {
    pub label: String,
    pub left: usize,
    pub right: usize,
    pub expected: VectorField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankFact {
    pub point: Vec<f64>,
    pub subset: Subset,
    pub rank: usize,
}

/// Stationary density on an interval, normalized by `normalization`.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub expr: Expr,
    pub text: String,
    pub interval: (f64, f64),
    pub normalization: f64,
    pub normalization_error: f64,
}

/// `L phi <= c1 - c2 phi` on the entry's domain.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    pub phi: Expr,
    pub text: String,
    pub c1: f64,
    pub c2: f64,
    /// Coordinates from this index on evolve by an autonomous ODE.
    pub ode_block: Option<usize>,
}

/// Largest discrepancies seen while verifying the entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadCheck {
    pub points: usize,
    pub identity_error: f64,
    pub v0_perp_error: f64,
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: String,
    pub description: String,
    pub system: SDESystem,
    pub level: usize,
    pub domain: Vec<(f64, f64)>,
    pub x0: Vec<f64>,
    pub param_ranges: Vec<ParamRange>,
    pub identities: Vec<BracketIdentity>,
    /// Closed-form perpendicular drift, valid where the frame rank is
    /// locally constant.
    pub v0_perp: Option<VectorField>,
    pub ranks: Vec<RankFact>,
    /// Oracle statements in words, for `catalog show`.
    pub facts: Vec<String>,
    /// Largest `lambda0` for which the obtuse angle condition holds.
    pub lambda0: Option<f64>,
    pub density: Option<Density>,
    pub lyapunov: Option<LyapunovCertificate>,
    pub load_check: LoadCheck,
}

const NAMES: [&str; 9] = [
    "gbm",
    "sinfields",
    "linear",
    "non-ufg-psi",
    "ufg-heisenberg",
    "random-circles",
    "grushin",
    "sine-ou",
    "circle-line",
];

pub fn names() -> Vec<&'static str> {
    NAMES.to_vec()
}

fn vf(components: &[String], vars: &[&str]) -> Result<VectorField, CatalogError> {
    VectorField::parse(components, vars).map_err(|e| CatalogError::Definition(e.to_string()))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn system(name: &str, vars: &[&str], drift: &[String], noise: &[Vec<String>]) -> Result<SDESystem, CatalogError> {
    let noise = noise.iter().map(|c| vf(c, vars)).collect::<Result<Vec<_>, _>>()?;
    SDESystem::new(name, strings(vars), vf(drift, vars)?, noise).map_err(|e| CatalogError::Definition(e.to_string()))
}

fn identity(label: &str, left: usize, right: usize, expected: &[String], vars: &[&str]) -> Result<BracketIdentity, CatalogError> {
    Ok(BracketIdentity { label: label.into(), left, right, expected: vf(expected, vars)? })
}

fn rank(point: &[f64], subset: Subset, rank: usize) -> RankFact {
    RankFact { point: point.to_vec(), subset, rank }
}

struct Draft {
    description: String,
    system: SDESystem,
    level: usize,
    domain: Vec<(f64, f64)>,
    x0: Vec<f64>,
    param_ranges: Vec<ParamRange>,
    identities: Vec<BracketIdentity>,
    v0_perp: Option<VectorField>,
    ranks: Vec<RankFact>,
    facts: Vec<String>,
    lambda0: Option<f64>,
    density: Option<Density>,
    lyapunov: Option<LyapunovCertificate>,
}

impl Draft {
    fn new(description: &str, system: SDESystem, level: usize, domain: Vec<(f64, f64)>, x0: Vec<f64>) -> Self {
        Draft {
            description: description.into(),
            system,
            level,
            domain,
            x0,
            param_ranges: Vec::new(),
            identities: Vec::new(),
            v0_perp: None,
            ranks: Vec::new(),
            facts: Vec::new(),
            lambda0: None,
            density: None,
            lyapunov: None,
        }
    }

    fn fact(mut self, f: &str) -> Self {
        self.facts.push(f.into());
        self
    }
}

fn resolve(entry: &str, given: &BTreeMap<String, f64>, ranges: &[ParamRange]) -> Result<BTreeMap<String, f64>, CatalogError> {
    for name in given.keys() {
        if !ranges.iter().any(|r| r.name == name) {
            return Err(CatalogError::UnknownParameter { entry: entry.into(), name: name.clone() });
        }
    }
    let mut out = BTreeMap::new();
    for r in ranges {
        let v = given.get(r.name).copied().unwrap_or(r.default);
        if !(v >= r.lo && v <= r.hi) {
            return Err(CatalogError::OutOfRange { name: r.name.into(), value: v, lo: r.lo, hi: r.hi });
        }
        out.insert(r.name.to_string(), v);
    }
    Ok(out)
}

/// Builds and verifies a catalog entry. `params` may omit any parameter to
/// take its default.
pub fn get(name: &str, params: &BTreeMap<String, f64>) -> Result<CatalogEntry, CatalogError> {
    let ranges = param_ranges(name)?;
    let p = resolve(name, params, &ranges)?;
    if name == "linear" {
        if let Some((k, v)) = p.iter().find(|(_, v)| v.fract() != 0.0) {
            return Err(CatalogError::Definition(format!("parameter {k} = {v} must be an integer")));
        }
    }
    let mut draft = match name {
        "gbm" => gbm()?,
        "sinfields" => sinfields()?,
        "linear" => linear_random_draft(p["n"] as usize, p["noise"] as usize, p["seed"] as u64)?,
        "non-ufg-psi" => psi()?,
        "ufg-heisenberg" => heisenberg()?,
        "random-circles" => circles()?,
        "grushin" => grushin(p["k"])?,
        "sine-ou" => sine_ou(p["k"])?,
        "circle-line" => circle_line()?,
        _ => unreachable!("param_ranges rejects unknown names"),
    };
    draft.param_ranges = ranges;
    draft.system.params = p;
    finish(name, draft)
}

pub fn param_ranges(name: &str) -> Result<Vec<ParamRange>, CatalogError> {
    let r = |name, lo, hi, default| ParamRange { name, lo, hi, default };
    Ok(match name {
        "linear" => vec![r("n", 1.0, 6.0, 2.0), r("noise", 1.0, 6.0, 1.0), r("seed", 0.0, 1e15, 0.0)],
        "grushin" => vec![r("k", -10.0, 10.0, -1.0)],
        "sine-ou" => vec![r("k", 1e-3, 10.0, 2.0)],
        n if NAMES.contains(&n) => vec![],
        other => return Err(CatalogError::UnknownName(other.into())),
    })
}

fn gbm() -> Result<Draft, CatalogError> {
    let v = ["x"];
    let sys = system("gbm", &v, &strings(&["-2*x"]), &[strings(&["x"])])?;
    let mut d = Draft::new("geometric Brownian motion with V0 = -2 V1, V1 = x d/dx", sys, 1, vec![(-2.0, 2.0)], vec![1.0])
        .fact("[V1, V0] = 0, so the hierarchy closes at level 1")
        .fact("Hoermander's condition fails at x = 0, where every field vanishes")
        .fact("the Ito drift is -x, so E X_t = x0 exp(-t)");
    d.identities.push(identity("[V1, V0] = 0", 1, 0, &strings(&["0"]), &v)?);
    d.v0_perp = Some(vf(&strings(&["0"]), &v)?);
    d.ranks = vec![rank(&[1.0], Subset::Rm, 1), rank(&[0.0], Subset::RmWithDrift, 0)];
    Ok(d)
}

fn sinfields() -> Result<Draft, CatalogError> {
    let v = ["x", "y"];
    let sys = system("sinfields", &v, &strings(&["sin(x)", "0"]), &[strings(&["0", "sin(x)"])])?;
    let mut d = Draft::new("V0 = sin x d/dx, V1 = sin x d/dy", sys, 1, vec![(-3.0, 3.0), (-3.0, 3.0)], vec![1.0, 0.0])
        .fact("[V0, V1] = cos x V1, so the condition holds with m = 1")
        .fact("all fields vanish on the lines x = n pi");
    d.identities.push(identity("[V0, V1] = cos(x) V1", 0, 1, &strings(&["0", "cos(x)*sin(x)"]), &v)?);
    d.v0_perp = Some(vf(&strings(&["sin(x)", "0"]), &v)?);
    d.ranks = vec![rank(&[1.0, 0.0], Subset::RmWithDrift, 2), rank(&[0.0, 1.0], Subset::RmWithDrift, 0)];
    Ok(d)
}

/// `dX = (A X + D) dt + sqrt(2) sum_i C_i o dB^i` with constant columns
/// `C_i`; the hierarchy closes at level `2N - 1` by Cayley-Hamilton.
pub fn linear(a: &DMatrix<f64>, drift_offset: &[f64], c: &DMatrix<f64>) -> Result<CatalogEntry, CatalogError> {
    finish("linear", linear_draft(a, drift_offset, c)?)
}

fn linear_draft(a: &DMatrix<f64>, drift_offset: &[f64], c: &DMatrix<f64>) -> Result<Draft, CatalogError> {
    let n = a.nrows();
    if a.ncols() != n || c.nrows() != n || drift_offset.len() != n || c.ncols() == 0 {
        return Err(CatalogError::Definition("linear system needs A: NxN, D: N, C: Nxk with k >= 1".into()));
    }
    let vars: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let noise = (0..c.ncols())
        .map(|j| VectorField::constant(c.column(j).as_slice()))
        .collect();
    let sys = SDESystem::new("linear", vars, VectorField::affine(a, drift_offset), noise)
        .map_err(|e| CatalogError::Definition(e.to_string()))?;
    let level = 2 * n - 1;
    let mut d = Draft::new("linear drift A x + D with constant noise columns C_i", sys, level, vec![(-1.0, 1.0); n], vec![0.0; n])
        .fact("the hierarchy closes at level 2N - 1 by Cayley-Hamilton")
        .fact("V_[alpha] = A^k C_i for alpha = (i, 0, ..., 0) with k zeros")
        .fact("obtuse angle condition iff sym((A + lambda I) b b^T) <= 0 for b = A^k C_i");
    let owned = d.system.variables.clone();
    let names: Vec<&str> = owned.iter().map(String::as_str).collect();
    for i in 0..c.ncols() {
        let ac = a * c.column(i);
        let expected: Vec<String> = ac.iter().map(|v| format!("({v:e})")).collect();
        d.identities.push(identity(&format!("[V{}, V0] = A C_{}", i + 1, i + 1), i + 1, 0, &expected, &names)?);
    }
    Ok(d)
}

/// Random linear instance with entries of `A`, `D` and `C` uniform in
/// `[-1, 1]`.
pub fn linear_random(n: usize, noise: usize, seed: u64) -> Result<CatalogEntry, CatalogError> {
    finish("linear", linear_random_draft(n, noise, seed)?)
}

fn linear_random_draft(n: usize, noise: usize, seed: u64) -> Result<Draft, CatalogError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..=1.0));
    let offset: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let c = DMatrix::from_fn(n, noise, |_, _| rng.gen_range(-1.0..=1.0));
    linear_draft(&a, &offset, &c)
}

fn psi() -> Result<Draft, CatalogError> {
    let v = ["x", "y"];
    let sys = system("non-ufg-psi", &v, &strings(&["0", "exp(-1/x)"]), &[strings(&["1", "0"])])?;
    let mut d = Draft::new(
        "V0 = psi(x) d/dy with psi = exp(-1/x), V1 = d/dx, on x > 0",
        sys,
        3,
        vec![(0.01, 1.0), (-1.0, 1.0)],
        vec![0.5, 0.0],
    )
    .fact("brackets are psi^(k) d/dy; psi is flat at 0, so no finite level gives bounded coefficients")
    .fact("the UFG regression at level 3 reports unbounded coefficients (suspect) near x = 0");
    d.identities.push(identity("[V1, V0] = psi' d/dy", 1, 0, &strings(&["0", "exp(-1/x)/x^2"]), &v)?);
    d.v0_perp = Some(vf(&strings(&["0", "0"]), &v)?);
    d.ranks = vec![rank(&[0.5, 0.0], Subset::Rm, 2)];
    Ok(d)
}

fn heisenberg() -> Result<Draft, CatalogError> {
    let v = ["x", "y", "z"];
    let sys = system(
        "ufg-heisenberg",
        &v,
        &strings(&["-x", "-y", "-2*z"]),
        &[strings(&["0", "0", "-y"]), strings(&["0", "1", "x"])],
    )?;
    let mut d = Draft::new(
        "Heisenberg-type fields V1 = -y d/dz, V2 = d/dy + x d/dz with a linear contracting drift",
        sys,
        2,
        vec![(-2.0, 2.0), (-2.0, 2.0), (-2.0, 2.0)],
        vec![1.0, 0.0, 0.0],
    )
    .fact("the distribution has rank 3 off the plane x = 0 and rank 2 on it")
    .fact("the plane x = 0 is invariant; X^1_t = x0 exp(-t) deterministically")
    .fact("V0perp = -x d/dx");
    d.identities.push(identity("[V2, V1] = -d/dz", 2, 1, &strings(&["0", "0", "-1"]), &v)?);
    d.identities.push(identity("[V1, V0] = -V1", 1, 0, &strings(&["0", "0", "y"]), &v)?);
    d.v0_perp = Some(vf(&strings(&["-x", "0", "0"]), &v)?);
    d.ranks = vec![
        rank(&[1.0, 0.0, 0.0], Subset::Rm, 2),
        rank(&[1.0, 0.0, 0.0], Subset::RmWithDrift, 3),
        rank(&[0.0, 1.0, 1.0], Subset::RmWithDrift, 2),
    ];
    Ok(d)
}

fn circles() -> Result<Draft, CatalogError> {
    let v = ["x", "y"];
    let sys = system("random-circles", &v, &strings(&["-y", "x"]), &[strings(&["x", "y"])])?;
    let mut d = Draft::new("rotation drift with radial noise", sys, 1, vec![(-2.0, 2.0), (-2.0, 2.0)], vec![1.0, 0.0])
        .fact("X_t = e^(sqrt 2 B_t) (cos t, sin t) from (1, 0)")
        .fact("log-radius ~ N(0, 2t); the angle is exactly t")
        .fact("V0perp = V0, and Z_t = e^(-t V0)(X_t) = (e^(sqrt 2 B_t), 0)")
        .fact("polar chart: e^(t1 V1) e^(t2 V0) (1, 0) = e^t1 (cos t2, sin t2)");
    d.identities.push(identity("[V1, V0] = 0", 1, 0, &strings(&["0", "0"]), &v)?);
    d.v0_perp = Some(vf(&strings(&["-y", "x"]), &v)?);
    d.ranks = vec![
        rank(&[1.0, 0.0], Subset::Rm, 1),
        rank(&[1.0, 0.0], Subset::RmWithDrift, 2),
        rank(&[0.0, 0.0], Subset::RmWithDrift, 0),
    ];
    Ok(d)
}

fn grushin(k: f64) -> Result<Draft, CatalogError> {
    let v = ["z", "zeta"];
    let ks = format!("({k})");
    let sys = system("grushin", &v, &strings(&["0", &format!("{ks}*zeta")]), &[strings(&["zeta", "0"])])?;
    let mut d = Draft::new(
        "Grushin-type: dz = sqrt(2) zeta o dB, d zeta = k zeta dt",
        sys,
        1,
        vec![(-2.0, 2.0), (-2.0, 2.0)],
        vec![0.0, 1.0],
    )
    .fact("zeta_t = zeta0 e^(kt); z_t ~ N(z0, zeta0^2 (e^(2kt) - 1) / k)")
    .fact("the obtuse angle condition holds iff k > 0")
    .fact("the marginals are tight iff k < 0");
    d.identities.push(identity("[V1, V0] = -k V1", 1, 0, &[format!("-{ks}*zeta"), "0".into()], &v)?);
    d.v0_perp = Some(vf(&strings(&["0", &format!("{ks}*zeta")]), &v)?);
    d.ranks = vec![rank(&[0.0, 1.0], Subset::Rm, 1), rank(&[0.0, 0.0], Subset::Rm, 0)];
    if k != 0.0 {
        d.ranks.push(rank(&[0.0, 1.0], Subset::RmWithDrift, 2));
    }
    Ok(d)
}

fn sine_ou(k: f64) -> Result<Draft, CatalogError> {
    let v = ["z", "zeta"];
    let ks = format!("({k})");
    let sys = system(
        "sine-ou",
        &v,
        &strings(&[&format!("-{ks}*z"), "-sin(zeta)"]),
        &[strings(&["zeta", "0"])],
    )?;
    let mut d = Draft::new(
        "OU in z driven by zeta, with zeta following d zeta = -sin zeta dt",
        sys,
        1,
        vec![(-3.0, 3.0), (PI + 0.1, 3.0 * PI - 0.1)],
        vec![0.0, 4.0],
    )
    .fact("zeta_t -> 2 n pi for zeta0 in ((2n - 1) pi, (2n + 1) pi)")
    .fact("z_t converges in law to N(0, (2 n pi)^2 / k)")
    .fact("V0perp = -sin(zeta) d/dzeta off zeta = 0")
    .fact("phi = sqrt(1 + z^2) satisfies L phi <= k + zeta^2 - k phi");
    d.identities.push(identity(
        "[V1, V0] = (-k + sin(zeta)/zeta) V1",
        1,
        0,
        &[format!("(-{ks} + sin(zeta)/zeta)*zeta"), "0".into()],
        &v,
    )?);
    d.v0_perp = Some(vf(&strings(&["0", "-sin(zeta)"]), &v)?);
    d.ranks = vec![rank(&[0.0, 4.0], Subset::Rm, 1), rank(&[0.0, 4.0], Subset::RmWithDrift, 2)];
    let zeta_max = d.domain[1].1;
    d.lyapunov = Some(LyapunovCertificate {
        phi: parse_expression("sqrt(1 + z^2)", &v).map_err(|e| CatalogError::Definition(e.to_string()))?,
        text: "sqrt(1 + z^2)".into(),
        c1: k + zeta_max * zeta_max,
        c2: k,
        ode_block: Some(1),
    });
    Ok(d)
}

fn circle_line() -> Result<Draft, CatalogError> {
    let v = ["z"];
    let sys = system("circle-line", &v, &strings(&["sin(z)"]), &[strings(&["1 - cos(z)"])])?;
    let (c, err) = circle_line_normalization();
    let text = format!("exp(-1/(1 - cos(z)))/(({c:e})*(1 - cos(z)))");
    let expr = parse_expression(&text, &v).map_err(|e| CatalogError::Definition(e.to_string()))?;
    let mut d = Draft::new("V0 = sin z d/dz, V1 = (1 - cos z) d/dz", sys, 1, vec![(0.2, 2.0 * PI - 0.2)], vec![PI])
        .fact("[V1, V0] = -V1")
        .fact("the obtuse angle condition holds with lambda0 = 1 and no larger value")
        .fact("rho(z) = exp(-1/(1 - cos z)) / (C (1 - cos z)) is stationary on (0, 2 pi)")
        .fact("Dirac masses at 2 n pi are invariant");
    d.identities.push(identity("[V1, V0] = -V1", 1, 0, &strings(&["cos(z) - 1"]), &v)?);
    d.v0_perp = Some(vf(&strings(&["0"]), &v)?);
    d.ranks = vec![rank(&[PI], Subset::Rm, 1), rank(&[0.0], Subset::RmWithDrift, 0)];
    d.lambda0 = Some(1.0);
    d.density = Some(Density { expr, text, interval: (0.0, 2.0 * PI), normalization: c, normalization_error: err });
    Ok(d)
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson with Richardson correction on `[a, b]`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `C = int_0^{2 pi} exp(-1/(1 - cos z)) / (1 - cos z) dz` as the limit of
/// the integral over `(delta, 2 pi - delta)` for shrinking `delta`; the
/// error estimate is the change over the last halving plus the quadrature
/// tolerance.
pub fn circle_line_normalization() -> (f64, f64) {
    let f = |z: f64| {
        let w = 1.0 - z.cos();
        if w > 0.0 {
            (-1.0 / w).exp() / w
        } else {
            0.0
        }
    };
    let tol = 1e-13;
    let mut prev = f64::NAN;
    let mut value = 0.0;
    let mut delta = 0.2;
    for _ in 0..8 {
        value = adaptive_simpson(&f, delta, 2.0 * PI - delta, tol);
        delta *= 0.5;
        if (value - prev).abs() <= tol {
            break;
        }
        prev = value;
    }
    let change = if prev.is_finite() { (value - prev).abs() } else { value.abs() };
    (value, change + tol)
}

fn random_point(rng: &mut ChaCha8Rng, domain: &[(f64, f64)]) -> Vec<f64> {
    domain.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect()
}

fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let diff: Vec<f64> = got.iter().zip(want).map(|(a, b)| a - b).collect();
    linalg::norm(&diff) / (1.0 + linalg::norm(want))
}

fn name_seed(name: &str) -> u64 {
    name.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3))
}

fn finish(name: &str, d: Draft) -> Result<CatalogEntry, CatalogError> {
    let sys = &d.system;
    let table = build_hierarchy(&sys.fields(), d.level)?;
    let base = sys.fields();
    let brackets: Vec<VectorField> = d
        .identities
        .iter()
        .map(|id| lie_bracket(&base[id.left], &base[id.right]))
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(name));
    let mut check = LoadCheck { points: LOAD_CHECK_POINTS, identity_error: 0.0, v0_perp_error: 0.0 };
    let fail = |what: &str, point: &[f64], error: f64| CatalogError::IdentityFailed {
        entry: name.into(),
        what: what.into(),
        point: point.to_vec(),
        error,
    };
    for _ in 0..LOAD_CHECK_POINTS {
        let x = random_point(&mut rng, &d.domain);
        for (id, br) in d.identities.iter().zip(&brackets) {
            let e = rel_err(&br.eval_vec(&x), &id.expected.eval_vec(&x));
            check.identity_error = check.identity_error.max(e);
            if !(e <= LOAD_CHECK_TOL) {
                return Err(fail(&id.label, &x, e));
            }
        }
        if let Some(perp) = &d.v0_perp {
            let got = decompose_drift(&table, &x, crate::geometry::DEFAULT_RTOL)?.perpendicular;
            let e = rel_err(&got, &perp.eval_vec(&x));
            check.v0_perp_error = check.v0_perp_error.max(e);
            if !(e <= LOAD_CHECK_TOL) {
                return Err(fail("V0perp", &x, e));
            }
        }
    }
    for r in &d.ranks {
        let found = rank_at(&table, r.subset, &r.point, crate::geometry::DEFAULT_RTOL)?;
        if found != r.rank {
            return Err(CatalogError::RankMismatch { entry: name.into(), point: r.point.clone(), expected: r.rank, found });
        }
    }
    Ok(CatalogEntry {
        name: name.into(),
        description: d.description,
        system: d.system,
        level: d.level,
        domain: d.domain,
        x0: d.x0,
        param_ranges: d.param_ranges,
        identities: d.identities,
        v0_perp: d.v0_perp,
        ranks: d.ranks,
        facts: d.facts,
        lambda0: d.lambda0,
        density: d.density,
        lyapunov: d.lyapunov,
        load_check: check,
    })
}

impl CatalogEntry {
    /// Instance with default parameters.
    pub fn default_for(name: &str) -> Result<CatalogEntry, CatalogError> {
        get(name, &BTreeMap::new())
    }
}
