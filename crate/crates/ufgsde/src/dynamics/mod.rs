//! Deterministic flows, the Ad operator, Stratonovich path simulation with
//! the `sqrt(2)` noise convention, the auxiliary process and flow limits.

use std::collections::BTreeMap;

use crate::fields::{build_hierarchy, BracketTable, FieldError, VectorField};

mod aux;
mod flow;
mod sim;

pub use aux::{auxiliary_process, flow_limit, rank_along_path, FlowLimit, FlowLimitConfig};
pub(crate) use flow::flow_with_jacobian;
pub use flow::{adjoint_push, flow, flow_jacobian, AdjointPush, ADJOINT_CONSISTENCY};
pub(crate) use sim::{draw_increments, out_of_bounds, path_rng, HeunScratch};
pub use sim::{
    path_seed, simulate_paths, splitmix64, PathEnsemble, Recording, SimConfig,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("state became non-finite or left the divergence radius at t = {time}")]
    BlowUp { time: f64 },
    #[error("flow Jacobian is singular at t = {time}")]
    SingularJacobian { time: f64 },
    #[error("adjoint push formulas disagree by {discrepancy:e}")]
    AdjointInconsistent { discrepancy: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Stratonovich system `dX = V0 dt + sqrt(2) sum_i Vi(X) o dB^i`.
#[derive(Debug, Clone)]
pub struct SDESystem {
    pub name: String,
    pub variables: Vec<String>,
    pub drift: VectorField,
    pub noise: Vec<VectorField>,
    pub params: BTreeMap<String, f64>,
}

impl SDESystem {
    pub fn new(
        name: impl Into<String>,
        variables: Vec<String>,
        drift: VectorField,
        noise: Vec<VectorField>,
    ) -> Result<Self, FieldError> {
        if noise.is_empty() {
            return Err(FieldError::NoNoise);
        }
        let n = drift.dim();
        if variables.len() != n {
            return Err(FieldError::DimensionMismatch(n, variables.len()));
        }
        for f in &noise {
            if f.dim() != n {
                return Err(FieldError::DimensionMismatch(n, f.dim()));
            }
        }
        Ok(SDESystem {
            name: name.into(),
            variables,
            drift,
            noise,
            params: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn noise_count(&self) -> usize {
        self.noise.len()
    }

    /// `[V0, V1, .., Vd]`.
    pub fn fields(&self) -> Vec<VectorField> {
        std::iter::once(self.drift.clone()).chain(self.noise.iter().cloned()).collect()
    }

    pub fn hierarchy(&self, m: usize) -> Result<BracketTable, FieldError> {
        build_hierarchy(&self.fields(), m)
    }

    /// The same system with its drift replaced.
    pub fn with_drift(&self, drift: VectorField) -> Result<Self, FieldError> {
        let mut s = SDESystem::new(self.name.clone(), self.variables.clone(), drift, self.noise.clone())?;
        s.params = self.params.clone();
        Ok(s)
    }
}

/// Integration settings for deterministic flows.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    /// Largest RK4 step; fixed-step mode uses `ceil(|t|/dt)` equal steps.
    pub dt: f64,
    /// Largest admissible `|t|`.
    pub max_time: f64,
    /// Local error tolerance for step-doubling control; `None` keeps `dt` fixed.
    pub adaptive_tol: Option<f64>,
    /// States with norm above this count as blow-up.
    pub divergence_radius: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt: 1e-3,
            max_time: 1e6,
            adaptive_tol: None,
            divergence_radius: 1e8,
        }
    }
}

impl FlowConfig {
    pub fn with_dt(dt: f64) -> Self {
        FlowConfig {
            dt,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DynamicsError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if let Some(tol) = self.adaptive_tol {
            if !(tol > 0.0) {
                return Err(DynamicsError::InvalidConfig("adaptive tolerance must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Ito drift `V0 + sum_i (DVi) Vi` of the system; the diffusion columns
/// stay `sqrt(2) Vi`.
pub fn stratonovich_to_ito(system: &SDESystem) -> VectorField {
    let mut drift = system.drift.clone();
    for v in &system.noise {
        let correction: Vec<_> = v.components().iter().map(|c| v.apply(c)).collect();
        let correction = VectorField::new(correction).expect("same dimension as the system");
        drift = drift.add(&correction).expect("same dimension as the system");
    }
    drift
}

/// Finite-difference Lie bracket of numerically defined fields, used to
/// cross-check symbolic brackets and Ad identities.
pub fn numeric_bracket(
    v: &dyn crate::fields::Field,
    w: &dyn crate::fields::Field,
    x: &[f64],
) -> Vec<f64> {
    let n = x.len();
    let mut dv = vec![0.0; n * n];
    let mut dw = vec![0.0; n * n];
    v.jacobian_into(x, &mut dv);
    w.jacobian_into(x, &mut dw);
    let vx = v.eval_vec(x);
    let wx = w.eval_vec(x);
    (0..n)
        .map(|j| (0..n).map(|i| vx[i] * dw[j * n + i] - wx[i] * dv[j * n + i]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Field;

    #[test]
    fn ito_drift_examples() {
        let gbm = SDESystem::new(
            "gbm",
            vec!["x".into()],
            VectorField::parse(&["-2*x"], &["x"]).unwrap(),
            vec![VectorField::parse(&["x"], &["x"]).unwrap()],
        )
        .unwrap();
        let ito = stratonovich_to_ito(&gbm);
        for x in [-1.5, 0.0, 2.0] {
            assert_eq!(ito.eval_vec(&[x])[0], -x);
        }

        let additive = SDESystem::new(
            "ou",
            vec!["x".into()],
            VectorField::parse(&["-x"], &["x"]).unwrap(),
            vec![VectorField::parse(&["1"], &["x"]).unwrap()],
        )
        .unwrap();
        assert_eq!(stratonovich_to_ito(&additive), additive.drift);

        let cl = SDESystem::new(
            "circle-line",
            vec!["z".into()],
            VectorField::parse(&["sin(z)"], &["z"]).unwrap(),
            vec![VectorField::parse(&["1 - cos(z)"], &["z"]).unwrap()],
        )
        .unwrap();
        let ito = stratonovich_to_ito(&cl);
        for z in [0.3f64, 1.7, 4.0] {
            let expected = z.sin() + z.sin() * (1.0 - z.cos());
            assert!((ito.eval_vec(&[z])[0] - expected).abs() < 1e-14);
        }
    }
}
