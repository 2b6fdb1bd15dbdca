use rayon::prelude::*;

use super::flow::{flow, Rk4Scratch};
use super::{DynamicsError, FlowConfig, PathEnsemble};
use crate::fields::{BracketTable, Field, Subset};
use crate::linalg;

/// `Z_t = e^{-t V0perp}(X_t)` at every stored time of every path. The
/// backward flow is recomputed from `X_t` for each entry; paths whose flow
/// fails are marked as blown up.
pub fn auxiliary_process(
    ensemble: &PathEnsemble,
    v0_perp: &dyn Field,
    cfg: &FlowConfig,
) -> Result<PathEnsemble, DynamicsError> {
    if v0_perp.dim() != ensemble.dim {
        return Err(DynamicsError::InvalidConfig(format!(
            "field dimension {} does not match ensemble dimension {}",
            v0_perp.dim(),
            ensemble.dim
        )));
    }
    let n = ensemble.dim;
    let nt = ensemble.n_times();
    let mut out = ensemble.clone();
    out.states
        .par_chunks_mut(nt * n)
        .zip(out.blown_up.par_iter_mut())
        .enumerate()
        .for_each(|(p, (chunk, blown))| {
            if *blown {
                return;
            }
            for (k, &t) in ensemble.times.iter().enumerate() {
                let x = ensemble.state(p, k);
                match flow(v0_perp, x, -t, cfg) {
                    Ok(z) => chunk[k * n..(k + 1) * n].copy_from_slice(&z),
                    Err(_) => {
                        *blown = true;
                        chunk[k * n..].fill(f64::NAN);
                        return;
                    }
                }
            }
        });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowLimitConfig {
    pub t_max: f64,
    /// Converged once `|V(gamma(t))| < stall_tol`.
    pub stall_tol: f64,
    pub divergence_radius: f64,
    pub dt: f64,
}

impl Default for FlowLimitConfig {
    fn default() -> Self {
        FlowLimitConfig {
            t_max: 1e3,
            stall_tol: 1e-8,
            divergence_radius: 1e8,
            dt: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowLimit {
    Converged { point: Vec<f64>, residual: f64, time: f64 },
    Diverged { point: Vec<f64>, time: f64 },
    NotConverged { point: Vec<f64>, residual: f64 },
}

/// Follows `e^{tV}(x)` until the field stalls, the curve leaves the
/// divergence radius, or `t_max` is reached.
pub fn flow_limit(v: &dyn Field, x: &[f64], cfg: &FlowLimitConfig) -> Result<FlowLimit, DynamicsError> {
    if !(cfg.t_max > 0.0 && cfg.dt > 0.0) {
        return Err(DynamicsError::InvalidConfig("t_max and dt must be positive".into()));
    }
    let mut y = x.to_vec();
    let mut vy = vec![0.0; y.len()];
    let mut scratch = Rk4Scratch::new(y.len());
    let rhs = |s: &[f64], out: &mut [f64]| v.eval_into(s, out);
    let mut t = 0.0;
    loop {
        v.eval_into(&y, &mut vy);
        let speed = linalg::norm(&vy);
        if !speed.is_finite() || y.iter().any(|c| !c.is_finite()) || linalg::norm(&y) > cfg.divergence_radius {
            return Ok(FlowLimit::Diverged { point: y, time: t });
        }
        if speed < cfg.stall_tol {
            return Ok(FlowLimit::Converged { point: y, residual: speed, time: t });
        }
        if t >= cfg.t_max {
            return Ok(FlowLimit::NotConverged { point: y, residual: speed });
        }
        let h = cfg.dt.min(cfg.t_max - t);
        scratch.step(&rhs, &mut y, h);
        t += h;
    }
}

/// `(t, rank Delta_0)` at each stored time of one path; stops at the first
/// non-finite state.
pub fn rank_along_path(ensemble: &PathEnsemble, path: usize, table: &BracketTable, rtol: f64) -> Vec<(f64, usize)> {
    let mut out = Vec::with_capacity(ensemble.n_times());
    for (k, &t) in ensemble.times.iter().enumerate() {
        let x = ensemble.state(path, k);
        if x.iter().any(|v| !v.is_finite()) {
            break;
        }
        match table.evaluate_frame(Subset::RmWithDrift, x) {
            Ok(f) => out.push((t, linalg::numerical_rank(&f, rtol))),
            Err(_) => break,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::VectorField;

    #[test]
    fn sine_flow_limit() {
        let v = VectorField::parse(&["0", "-sin(zeta)"], &["z", "zeta"]).unwrap();
        match flow_limit(&v, &[0.0, 4.0], &FlowLimitConfig::default()).unwrap() {
            FlowLimit::Converged { point, .. } => {
                assert!((point[1] - 2.0 * std::f64::consts::PI).abs() < 1e-6)
            }
            other => panic!("unexpected {other:?}"),
        }
        match flow_limit(&v, &[0.0, 0.0], &FlowLimitConfig::default()).unwrap() {
            FlowLimit::Converged { point, time, .. } => {
                assert_eq!(point, vec![0.0, 0.0]);
                assert_eq!(time, 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        let grow = VectorField::parse(&["0", "zeta"], &["z", "zeta"]).unwrap();
        assert!(matches!(
            flow_limit(&grow, &[0.0, 1.0], &FlowLimitConfig::default()).unwrap(),
            FlowLimit::Diverged { .. }
        ));
    }
}
