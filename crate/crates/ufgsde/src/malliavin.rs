//! Jacobian flow, reduced Malliavin covariance and Malliavin matrix.
//!
//! Convention: `D_r X_t = J_t J_r^{-1} V(X_r)` with the stored noise fields
//! (no `sqrt(2)`), so `C_t = sum_k int_0^t J_s^{-1} V_k V_k^T J_s^{-T} ds`
//! and `M_t = J_t C_t J_t^T`. Texts that fold the `sqrt(2)` into `D` get a
//! factor 2 on both matrices.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{draw_increments, out_of_bounds, path_rng, DynamicsError, HeunScratch, SDESystem, SimConfig};
use crate::fields::Field;
use crate::linalg;

/// Largest tolerated `max |J K - I|` between the companion inverse `K` and `J`.
pub const INVERSE_CONSISTENCY: f64 = 1e-6;
/// Steps between resets of the companion inverse to the direct inverse.
pub const INVERSE_RESET_STEPS: usize = 100;
/// Default threshold on the upper-block condition number.
pub const DEFAULT_COND_THRESHOLD: f64 = 1e10;
/// Default relative bound on entries outside the upper block.
pub const DEFAULT_BLOCK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MalliavinError {
    #[error("J^-1 inconsistent at t = {time}: max |J K - I| = {error:e}")]
    InverseInconsistent { time: f64, error: f64 },
    #[error("Jacobian singular at t = {time}")]
    SingularJacobian { time: f64 },
    #[error("path left the divergence radius at t = {time}")]
    BlowUp { time: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// One path of `(X, J, J^{-1})` at the recorded times.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalPath {
    pub times: Vec<f64>,
    /// Row-major `n_times x dim`.
    pub states: Vec<f64>,
    pub jacobian: Vec<DMatrix<f64>>,
    /// Companion-SDE inverse; within `INVERSE_CONSISTENCY` of `jacobian^-1`.
    pub inverse: Vec<DMatrix<f64>>,
    /// Aggregated increments between recorded times, row-major.
    pub increments: Vec<f64>,
    /// `M_t` from the direct recursion `S <- A S A^T + w G` over the Heun
    /// step maps `A`, never touching `J^{-1}`.
    pub malliavin_direct: Vec<DMatrix<f64>>,
    pub max_inverse_error: f64,
}

impl VariationalPath {
    pub fn dim(&self) -> usize {
        self.jacobian.first().map_or(0, |j| j.nrows())
    }

    pub fn state(&self, k: usize) -> &[f64] {
        let n = self.dim();
        &self.states[k * n..(k + 1) * n]
    }
}

fn noise_gram(system: &SDESystem, x: &[f64], buf: &mut [f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut g = DMatrix::zeros(n, n);
    for v in &system.noise {
        v.eval_into(x, buf);
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] += buf[i] * buf[j];
            }
        }
    }
    g
}

/// `h DV0(x) + sqrt(2) sum_i dw_i DVi(x)`.
fn step_generator(system: &SDESystem, x: &[f64], h: f64, dw: &[f64], buf: &mut [f64]) -> DMatrix<f64> {
    let n = x.len();
    system.drift.eval_jacobian_into(x, buf);
    let mut m = DMatrix::from_row_slice(n, n, buf) * h;
    for (v, w) in system.noise.iter().zip(dw) {
        v.eval_jacobian_into(x, buf);
        m += DMatrix::from_row_slice(n, n, buf) * (std::f64::consts::SQRT_2 * w);
    }
    m
}

fn inverse_error(j: &DMatrix<f64>, k: &DMatrix<f64>) -> f64 {
    let n = j.nrows();
    (j * k - DMatrix::identity(n, n)).amax()
}

/// Joint stochastic Heun integration of `X`, `dJ = DV0 J dt + sqrt(2)
/// sum DVi J o dB^i` and the companion `dK = -K DV0 dt - sqrt(2) sum K DVi
/// o dB^i`, sharing the increments of path `path` of `simulate_paths`. `K`
/// is checked against `J` at every recorded time and reset to the direct
/// inverse every `INVERSE_RESET_STEPS` steps.
pub fn simulate_variational(
    system: &SDESystem,
    x0: &[f64],
    cfg: &SimConfig,
    path: usize,
) -> Result<VariationalPath, MalliavinError> {
    let n = system.dim();
    let d = system.noise_count();
    if x0.len() != n {
        return Err(MalliavinError::Shape(format!(
            "initial point has {} coordinates, system has {n}",
            x0.len()
        )));
    }
    let steps = cfg.recorded_steps()?;
    let total = cfg.steps();
    let id = DMatrix::<f64>::identity(n, n);

    let mut rng = path_rng(cfg.seed, path);
    let mut heun = HeunScratch::new(n, d);
    let mut x = x0.to_vec();
    let mut x_prev = x.clone();
    let mut dw = vec![0.0; d];
    let mut acc = vec![0.0; d];
    let mut vbuf = vec![0.0; n];
    let mut jbuf = vec![0.0; n * n];
    let mut j = id.clone();
    let mut k = id.clone();
    let mut g = noise_gram(system, &x, &mut vbuf);
    let mut s = DMatrix::<f64>::zeros(n, n);

    let mut out = VariationalPath {
        times: steps.iter().map(|&s| cfg.step_time(s)).collect(),
        states: x.clone(),
        jacobian: vec![j.clone()],
        inverse: vec![k.clone()],
        increments: Vec::with_capacity((steps.len() - 1) * d),
        malliavin_direct: vec![s.clone()],
        max_inverse_error: 0.0,
    };
    let mut slot = 1;
    for step in 0..total {
        let t0 = cfg.step_time(step);
        let t1 = cfg.step_time(step + 1);
        let h = t1 - t0;
        draw_increments(&mut rng, h, &mut dw);
        x_prev.copy_from_slice(&x);
        heun.step(system, &mut x, h, &dw);
        if out_of_bounds(&x, cfg.divergence_radius) {
            return Err(MalliavinError::BlowUp { time: t1 });
        }
        let m0 = step_generator(system, &x_prev, h, &dw, &mut jbuf);
        let m1 = step_generator(system, heun.predictor(), h, &dw, &mut jbuf);
        let a = &id + (&m0 + &m1 + &m1 * &m0) * 0.5;
        j = &a * &j;
        let k_pred = &k - &k * &m0;
        k = &k - (&k * &m0 + &k_pred * &m1) * 0.5;
        let g_next = noise_gram(system, &x, &mut vbuf);
        s = &a * (&s + &g * (0.5 * h)) * a.transpose() + &g_next * (0.5 * h);
        g = g_next;
        for (c, w) in acc.iter_mut().zip(&dw) {
            *c += w;
        }

        let record = slot < steps.len() && steps[slot] == step + 1;
        let reset = (step + 1) % INVERSE_RESET_STEPS == 0;
        if record || reset {
            let err = inverse_error(&j, &k);
            out.max_inverse_error = out.max_inverse_error.max(err);
            if !(err <= INVERSE_CONSISTENCY) {
                return Err(MalliavinError::InverseInconsistent { time: t1, error: err });
            }
        }
        if record {
            out.states.extend_from_slice(&x);
            out.jacobian.push(j.clone());
            out.inverse.push(k.clone());
            out.malliavin_direct.push(s.clone());
            out.increments.extend_from_slice(&acc);
            acc.fill(0.0);
            slot += 1;
        }
        if reset {
            k = j.clone().try_inverse().ok_or(MalliavinError::SingularJacobian { time: t1 })?;
        }
    }
    Ok(out)
}

/// `simulate_variational` for paths `0..cfg.n_paths`, in parallel; results
/// are in path order and independent of the schedule.
pub fn simulate_variational_paths(
    system: &SDESystem,
    x0: &[f64],
    cfg: &SimConfig,
) -> Vec<Result<VariationalPath, MalliavinError>> {
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| simulate_variational(system, x0, cfg, p))
        .collect()
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `C_t` at the last recorded time by the trapezoid rule on the recorded
/// grid, symmetrized.
pub fn reduced_covariance(path: &VariationalPath, system: &SDESystem) -> DMatrix<f64> {
    let n = path.dim();
    let mut buf = vec![0.0; n];
    let integrand = |k: usize, buf: &mut [f64]| {
        let g = noise_gram(system, path.state(k), buf);
        &path.inverse[k] * g * path.inverse[k].transpose()
    };
    let mut c = DMatrix::zeros(n, n);
    let mut prev = integrand(0, &mut buf);
    for k in 1..path.times.len() {
        let next = integrand(k, &mut buf);
        c += (&prev + &next) * (0.5 * (path.times[k] - path.times[k - 1]));
        prev = next;
    }
    symmetrize(c)
}

/// `M_t = J_t C_t J_t^T` at the last recorded time.
pub fn malliavin_matrix(path: &VariationalPath, system: &SDESystem) -> DMatrix<f64> {
    let c = reduced_covariance(path, system);
    let j = path.jacobian.last().expect("path has the initial time");
    symmetrize(j * c * j.transpose())
}

/// Row-major matrix with its shape, for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixData {
    fn from(m: &DMatrix<f64>) -> Self {
        MatrixData {
            shape: [m.nrows(), m.ncols()],
            data: m.transpose().iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalliavinReport {
    pub matrix: MatrixData,
    pub reduced_covariance: Option<MatrixData>,
    pub split: usize,
    /// Largest magnitude outside the upper `split x split` block.
    pub off_block_max: f64,
    /// `off_block_max / max |M_ij|`; 0 for the zero matrix.
    pub off_block_relative: f64,
    /// `sigma_max / sigma_min` of the upper block; infinite when singular.
    pub upper_condition: f64,
    pub asymmetry: f64,
    /// `lambda_min / lambda_max` of the symmetric part; 0 for the zero matrix.
    pub min_eigen_ratio: f64,
    pub block_tol: f64,
    pub cond_threshold: f64,
    pub block_holds: bool,
    pub upper_invertible: bool,
}

/// Block structure `[[M_Z, 0], [0, 0]]` and invertibility of `M_Z`.
pub fn block_and_rank_check(
    m: &DMatrix<f64>,
    split: usize,
    block_tol: f64,
    cond_threshold: f64,
) -> Result<MalliavinReport, MalliavinError> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(MalliavinError::Shape(format!("matrix is {}x{}", n, m.ncols())));
    }
    if split == 0 || split > n {
        return Err(MalliavinError::Shape(format!("split {split} outside 1..={n}")));
    }
    let scale = m.amax();
    let mut off = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i >= split || j >= split {
                off = off.max(m[(i, j)].abs());
            }
        }
    }
    let off_rel = if scale > 0.0 { off / scale } else { 0.0 };
    let upper = m.view((0, 0), (split, split)).into_owned();
    let sv = linalg::singular_values(&upper);
    let smax = sv.first().copied().unwrap_or(0.0);
    let smin = sv.last().copied().unwrap_or(0.0);
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let sym = symmetrize(m.clone());
    let eig = sym.symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let ratio = if hi > 0.0 { lo / hi } else { 0.0 };
    Ok(MalliavinReport {
        matrix: m.into(),
        reduced_covariance: None,
        split,
        off_block_max: off,
        off_block_relative: off_rel,
        upper_condition: cond,
        asymmetry: (m - m.transpose()).amax(),
        min_eigen_ratio: ratio,
        block_tol,
        cond_threshold,
        block_holds: off_rel <= block_tol,
        upper_invertible: cond <= cond_threshold,
    })
}
