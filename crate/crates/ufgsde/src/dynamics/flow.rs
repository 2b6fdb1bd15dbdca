use nalgebra::{DMatrix, DVector};

use super::{DynamicsError, FlowConfig};
use crate::fields::Field;

fn axpy(out: &mut [f64], y: &[f64], a: f64, k: &[f64]) {
    for ((o, yi), ki) in out.iter_mut().zip(y).zip(k) {
        *o = yi + a * ki;
    }
}

pub(crate) struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    pub(crate) fn new(n: usize) -> Self {
        Rk4Scratch {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    pub(crate) fn step<F: Fn(&[f64], &mut [f64])>(&mut self, rhs: &F, y: &mut [f64], h: f64) {
        rhs(y, &mut self.k1);
        axpy(&mut self.tmp, y, 0.5 * h, &self.k1);
        rhs(&self.tmp, &mut self.k2);
        axpy(&mut self.tmp, y, 0.5 * h, &self.k2);
        rhs(&self.tmp, &mut self.k3);
        axpy(&mut self.tmp, y, h, &self.k3);
        rhs(&self.tmp, &mut self.k4);
        for i in 0..y.len() {
            y[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

fn escaped(y: &[f64], watch: usize, radius: f64) -> bool {
    let mut r2 = 0.0;
    for v in &y[..watch] {
        if !v.is_finite() {
            return true;
        }
        r2 += v * v;
    }
    y[watch..].iter().any(|v| !v.is_finite()) || r2.sqrt() > radius
}

/// Integrates `y' = rhs(y)` over signed time `t`. Blow-up is checked on the
/// first `watch` coordinates against the divergence radius and on all
/// coordinates for finiteness.
pub(crate) fn integrate<F: Fn(&[f64], &mut [f64])>(
    rhs: F,
    y0: &[f64],
    t: f64,
    watch: usize,
    cfg: &FlowConfig,
) -> Result<Vec<f64>, DynamicsError> {
    cfg.validate()?;
    if !t.is_finite() || t.abs() > cfg.max_time {
        return Err(DynamicsError::InvalidConfig(format!(
            "flow time {t} exceeds the maximum {}",
            cfg.max_time
        )));
    }
    let mut y = y0.to_vec();
    if t == 0.0 {
        return Ok(y);
    }
    let mut s = Rk4Scratch::new(y.len());
    let sign = t.signum();
    match cfg.adaptive_tol {
        None => {
            let steps = (t.abs() / cfg.dt).ceil().max(1.0) as usize;
            let h = t / steps as f64;
            for k in 0..steps {
                s.step(&rhs, &mut y, h);
                if escaped(&y, watch, cfg.divergence_radius) {
                    return Err(DynamicsError::BlowUp {
                        time: (k + 1) as f64 * h,
                    });
                }
            }
        }
        Some(tol) => {
            let mut done = 0.0;
            let mut h = cfg.dt;
            let mut full = y.clone();
            let mut half = y.clone();
            while done < t.abs() {
                let step = h.min(t.abs() - done);
                full.copy_from_slice(&y);
                s.step(&rhs, &mut full, sign * step);
                half.copy_from_slice(&y);
                s.step(&rhs, &mut half, sign * step * 0.5);
                s.step(&rhs, &mut half, sign * step * 0.5);
                let err = full
                    .iter()
                    .zip(&half)
                    .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
                    .fold(0.0, f64::max);
                if !err.is_finite() {
                    return Err(DynamicsError::BlowUp { time: sign * done });
                }
                if err <= tol || step < 1e-14 * (1.0 + t.abs()) {
                    for i in 0..y.len() {
                        y[i] = half[i] + (half[i] - full[i]) / 15.0;
                    }
                    done += step;
                    if escaped(&y, watch, cfg.divergence_radius) {
                        return Err(DynamicsError::BlowUp { time: sign * done });
                    }
                }
                let factor = if err == 0.0 { 5.0 } else { 0.9 * (tol / err).powf(0.2) };
                h = step * factor.clamp(0.2, 5.0);
            }
        }
    }
    Ok(y)
}

/// `e^{tV}(x)`: the integral curve of `V` through `x` at signed time `t`.
pub fn flow(v: &dyn Field, x: &[f64], t: f64, cfg: &FlowConfig) -> Result<Vec<f64>, DynamicsError> {
    let n = x.len();
    integrate(|y, out| v.eval_into(y, out), x, t, n, cfg)
}

/// Endpoint and Jacobian `d e^{tV}(x) / dx`, from the variational equation
/// `J' = DV(gamma) J`, `J(0) = I`, integrated jointly with the curve.
pub(crate) fn flow_with_jacobian(
    v: &dyn Field,
    x: &[f64],
    t: f64,
    cfg: &FlowConfig,
) -> Result<(Vec<f64>, DMatrix<f64>), DynamicsError> {
    let n = x.len();
    let mut y0 = vec![0.0; n + n * n];
    y0[..n].copy_from_slice(x);
    for i in 0..n {
        y0[n + i * n + i] = 1.0;
    }
    let rhs = |y: &[f64], out: &mut [f64]| {
        let (state, jac) = y.split_at(n);
        let (dstate, djac) = out.split_at_mut(n);
        v.eval_into(state, dstate);
        let mut dv = vec![0.0; n * n];
        v.jacobian_into(state, &mut dv);
        // row-major: djac[r][c] = sum_k dv[r][k] jac[k][c]
        for r in 0..n {
            for c in 0..n {
                djac[r * n + c] = (0..n).map(|k| dv[r * n + k] * jac[k * n + c]).sum();
            }
        }
    };
    let y = integrate(rhs, &y0, t, n, cfg)?;
    let jac = DMatrix::from_row_slice(n, n, &y[n..]);
    Ok((y[..n].to_vec(), jac))
}

/// Jacobian of the flow map `x -> e^{tV}(x)`.
pub fn flow_jacobian(
    v: &dyn Field,
    x: &[f64],
    t: f64,
    cfg: &FlowConfig,
) -> Result<DMatrix<f64>, DynamicsError> {
    flow_with_jacobian(v, x, t, cfg).map(|(_, j)| j)
}

/// `(Ad_{tV} Y)(x)` computed two ways.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPush {
    /// `J_{e^{-tV}}(e^{tV}x) Y(e^{tV}x)`.
    pub value: Vec<f64>,
    /// `J_{e^{tV}}(x)^{-1} Y(e^{tV}x)`.
    pub alternative: Vec<f64>,
    pub discrepancy: f64,
}

/// Relative agreement required between the two Ad formulas.
pub const ADJOINT_CONSISTENCY: f64 = 1e-7;

pub fn adjoint_push(
    v: &dyn Field,
    y_field: &dyn Field,
    t: f64,
    x: &[f64],
    cfg: &FlowConfig,
) -> Result<AdjointPush, DynamicsError> {
    let (y, forward) = flow_with_jacobian(v, x, t, cfg)?;
    let backward = flow_jacobian(v, &y, -t, cfg)?;
    let yv = DVector::from_vec(y_field.eval_vec(&y));
    let value = &backward * &yv;
    let alternative = forward
        .lu()
        .solve(&yv)
        .ok_or(DynamicsError::SingularJacobian { time: t })?;
    let discrepancy = (&value - &alternative).amax();
    if !(discrepancy <= ADJOINT_CONSISTENCY * (1.0 + value.amax())) {
        return Err(DynamicsError::AdjointInconsistent { discrepancy });
    }
    Ok(AdjointPush {
        value: value.iter().copied().collect(),
        alternative: alternative.iter().copied().collect(),
        discrepancy,
    })
}
