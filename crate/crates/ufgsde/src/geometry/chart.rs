use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{decompose_drift, GeometryError, ProjectedDrift};
use crate::dynamics::{flow_with_jacobian, FlowConfig};
use crate::fields::{BracketTable, Field, Subset, VectorField};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonConfig {
    /// Stop when `|Psi(t) - x|_inf <= tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { tol: 1e-12, max_iter: 50 }
    }
}

/// One coordinate direction of a chart.
#[derive(Debug, Clone)]
pub enum ChartDirection {
    /// A field of `R_m`, labelled by its multi-index.
    Bracket { label: String, field: VectorField },
    /// The drift component orthogonal to the `R_m` frame.
    DriftPerp(ProjectedDrift),
    /// A constant completion direction.
    Constant { direction: Vec<f64>, field: VectorField },
}

impl ChartDirection {
    pub fn field(&self) -> &dyn Field {
        match self {
            ChartDirection::Bracket { field, .. } => field,
            ChartDirection::DriftPerp(p) => p,
            ChartDirection::Constant { field, .. } => field,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ChartDirection::Bracket { label, .. } => format!("V_{label}"),
            ChartDirection::DriftPerp(_) => "V0perp".into(),
            ChartDirection::Constant { direction, .. } => format!("const{direction:?}"),
        }
    }
}

/// Local coordinates `Psi(t) = e^{t_1 X_1} o ... o e^{t_N X_N}(x0)` on the
/// cube `|t|_inf <= radius`. The first `n` directions span `Delta` at `x0`.
#[derive(Debug, Clone)]
pub struct Chart {
    pub center: Vec<f64>,
    pub n: usize,
    pub directions: Vec<ChartDirection>,
    pub radius: f64,
    pub newton: NewtonConfig,
    pub flow: FlowConfig,
}

impl Chart {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, t: &[f64]) -> bool {
        t.len() == self.dim() && t.iter().all(|v| v.abs() <= self.radius)
    }

    /// `Psi(t)` and its Jacobian. With `p_{N+1} = x0` and
    /// `p_i = e^{t_i X_i} p_{i+1}`, column `i` is
    /// `J_1 ... J_{i-1} X_i(p_i)` where `J_k` is the Jacobian of the `k`-th
    /// flow at `p_{k+1}`.
    fn eval_with_jacobian(&self, t: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>), GeometryError> {
        let n = self.dim();
        let mut points = vec![Vec::new(); n + 1];
        let mut jacs = vec![DMatrix::identity(n, n); n];
        points[n] = self.center.clone();
        for i in (0..n).rev() {
            let (p, j) = flow_with_jacobian(self.directions[i].field(), &points[i + 1], t[i], &self.flow)?;
            points[i] = p;
            jacs[i] = j;
        }
        let mut jpsi = DMatrix::zeros(n, n);
        let mut prefix = DMatrix::identity(n, n);
        for i in 0..n {
            let xi = DVector::from_vec(self.directions[i].field().eval_vec(&points[i]));
            jpsi.set_column(i, &(&prefix * xi));
            prefix *= &jacs[i];
        }
        Ok((points[0].clone(), jpsi))
    }

    pub fn forward(&self, t: &[f64]) -> Result<Vec<f64>, GeometryError> {
        if !self.contains(t) {
            return Err(GeometryError::OutsideDomain);
        }
        Ok(self.eval_with_jacobian(t)?.0)
    }

    pub fn jacobian(&self, t: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        if !self.contains(t) {
            return Err(GeometryError::OutsideDomain);
        }
        Ok(self.eval_with_jacobian(t)?.1)
    }

    /// Damped Newton solve of `Psi(t) = x` started from `t = 0`.
    pub fn inverse(&self, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
        let n = self.dim();
        let target = DVector::from_column_slice(x);
        let mut t = DVector::zeros(n);
        let (p, mut jac) = self.eval_with_jacobian(t.as_slice())?;
        let mut r = DVector::from_vec(p) - &target;
        for _ in 0..self.newton.max_iter {
            if r.amax() <= self.newton.tol {
                return Ok(t.iter().copied().collect());
            }
            let step = jac
                .clone()
                .lu()
                .solve(&r)
                .ok_or(GeometryError::NewtonDiverged { residual: r.amax() })?;
            let mut damping = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial = &t - &step * damping;
                if let Ok((p, j)) = self.eval_with_jacobian(trial.as_slice()) {
                    let rt = DVector::from_vec(p) - &target;
                    if rt.amax() < r.amax() {
                        t = trial;
                        r = rt;
                        jac = j;
                        accepted = true;
                        break;
                    }
                }
                damping *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if r.amax() <= self.newton.tol {
            Ok(t.iter().copied().collect())
        } else {
            Err(GeometryError::NewtonDiverged { residual: r.amax() })
        }
    }

    /// Coordinate expression `(J Psi)^{-1} V(Psi(t))` of a field.
    pub fn pushforward(&self, v: &dyn Field, t: &[f64]) -> Result<Vec<f64>, GeometryError> {
        let (p, jac) = self.eval_with_jacobian(t)?;
        let vp = DVector::from_vec(v.eval_vec(&p));
        let sol = jac
            .lu()
            .solve(&vp)
            .ok_or_else(|| GeometryError::NotRegular("chart Jacobian is singular".into()))?;
        Ok(sol.iter().copied().collect())
    }
}

/// Builds a chart at a regular point `x0`.
///
/// The basis is picked from the `R_m` frame by column-pivoted Gram-Schmidt
/// (largest remaining norm first, ties to the earlier column). `V0perp` is
/// the next direction when `|V0perp(x0)| > rtol`; constant directions
/// spanning the orthogonal complement finish the frame.
pub fn build_chart(
    table: &BracketTable,
    x0: &[f64],
    radius: f64,
    rtol: f64,
    newton: NewtonConfig,
    flow: FlowConfig,
) -> Result<Chart, GeometryError> {
    let n_dim = table.dim();
    if x0.len() != n_dim {
        return Err(GeometryError::Shape(format!("x0 has {} coordinates, system {n_dim}", x0.len())));
    }
    if !(radius > 0.0) {
        return Err(GeometryError::InvalidArgument("chart radius must be positive".into()));
    }
    let frame = table.evaluate_frame(Subset::Rm, x0)?;
    let rank = linalg::numerical_rank(&frame, rtol);
    let probe = 0.1 * radius;
    for i in 0..n_dim {
        for s in [-1.0, 1.0] {
            let mut y = x0.to_vec();
            y[i] += s * probe;
            let r = super::rank_at(table, Subset::Rm, &y, rtol)?;
            if r != rank {
                return Err(GeometryError::NotRegular(format!(
                    "rank {rank} at the center but {r} at {y:?}"
                )));
            }
        }
    }

    let fields = table.frame_fields(Subset::Rm);
    let mut chosen: Vec<usize> = Vec::new();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let orth = |v: DVector<f64>, basis: &[DVector<f64>]| {
        let mut r = v;
        for _ in 0..2 {
            for q in basis {
                let c = q.dot(&r);
                r -= q * c;
            }
        }
        r
    };
    while chosen.len() < rank {
        let mut best: Option<(usize, f64, DVector<f64>)> = None;
        for k in 0..fields.len() {
            if chosen.contains(&k) {
                continue;
            }
            let r = orth(frame.column(k).into_owned(), &basis);
            let nr = r.norm();
            if best.as_ref().is_none_or(|(_, bn, _)| nr > *bn) {
                best = Some((k, nr, r));
            }
        }
        let (k, nr, r) = best.ok_or_else(|| GeometryError::NotRegular("frame exhausted".into()))?;
        if !(nr > 0.0) {
            return Err(GeometryError::NotRegular("frame columns are dependent".into()));
        }
        chosen.push(k);
        basis.push(r / nr);
    }
    let mut directions: Vec<ChartDirection> = chosen
        .iter()
        .map(|&k| ChartDirection::Bracket {
            label: fields[k].0.clone(),
            field: fields[k].1.clone(),
        })
        .collect();

    if directions.len() < n_dim {
        let d = decompose_drift(table, x0, rtol)?;
        let perp = DVector::from_vec(d.perpendicular);
        if perp.norm() > rtol {
            let r = orth(perp, &basis);
            let nr = r.norm();
            if nr > rtol {
                basis.push(r / nr);
                directions.push(ChartDirection::DriftPerp(ProjectedDrift::new(table.clone(), rtol)));
            }
        }
    }
    while directions.len() < n_dim {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for i in 0..n_dim {
            let r = orth(DVector::from_fn(n_dim, |j, _| if i == j { 1.0 } else { 0.0 }), &basis);
            let nr = r.norm();
            if best.as_ref().is_none_or(|(bn, _)| nr > *bn) {
                best = Some((nr, r));
            }
        }
        let (nr, r) = best.expect("dimension is positive");
        let q = r / nr;
        let direction: Vec<f64> = q.iter().copied().collect();
        basis.push(q);
        directions.push(ChartDirection::Constant {
            field: VectorField::constant(&direction),
            direction,
        });
    }

    Ok(Chart {
        center: x0.to_vec(),
        n: rank,
        directions,
        radius,
        newton,
        flow,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartReport {
    pub n: usize,
    pub samples: usize,
    /// Largest transverse component of a pushed-forward `R_m` or noise field.
    pub max_transverse: f64,
    /// Largest finite-difference derivative of the transverse drift
    /// components with respect to the leaf coordinates.
    pub max_drift_sensitivity: f64,
    pub max_roundtrip_error: f64,
    pub tol: f64,
    pub item_i: bool,
    pub item_ii: bool,
}

/// Uniform samples in the chart cube shrunk by `shrink` (so finite
/// differences stay inside), from a seeded stream.
pub fn chart_samples(chart: &Chart, count: usize, shrink: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = chart.radius * shrink;
    (0..count)
        .map(|_| (0..chart.dim()).map(|_| rng.gen_range(-r..r)).collect())
        .collect()
}

/// Checks the straightened structure at chart coordinates `samples`:
/// (i) every `R_m` field and noise field has vanishing components
/// `n+1..N`; (ii) components `n+1..N` of the pushed-forward drift do not
/// depend on the first `n` coordinates.
pub fn verify_chart_structure(
    chart: &Chart,
    table: &BracketTable,
    samples: &[Vec<f64>],
    fd_step: f64,
    tol: f64,
) -> Result<ChartReport, GeometryError> {
    let n = chart.n;
    let dim = chart.dim();
    let mut fields: Vec<VectorField> = table
        .frame_fields(Subset::Rm)
        .into_iter()
        .map(|(_, f)| f.clone())
        .collect();
    fields.extend(table.base().iter().skip(1).cloned());
    let mut max_transverse: f64 = 0.0;
    let mut max_sens: f64 = 0.0;
    let mut max_rt: f64 = 0.0;
    for t in samples {
        if !chart.contains(t) {
            return Err(GeometryError::OutsideDomain);
        }
        for f in &fields {
            let v = chart.pushforward(f, t)?;
            for c in &v[n..] {
                max_transverse = max_transverse.max(c.abs());
            }
        }
        for i in 0..n {
            let mut tp = t.clone();
            let mut tm = t.clone();
            tp[i] += fd_step;
            tm[i] -= fd_step;
            if !chart.contains(&tp) || !chart.contains(&tm) {
                return Err(GeometryError::OutsideDomain);
            }
            let vp = chart.pushforward(table.drift(), &tp)?;
            let vm = chart.pushforward(table.drift(), &tm)?;
            for j in n..dim {
                max_sens = max_sens.max(((vp[j] - vm[j]) / (2.0 * fd_step)).abs());
            }
        }
        let x = chart.forward(t)?;
        let back = chart.inverse(&x)?;
        let err = back.iter().zip(t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        max_rt = max_rt.max(err);
    }
    Ok(ChartReport {
        n,
        samples: samples.len(),
        max_transverse,
        max_drift_sensitivity: max_sens,
        max_roundtrip_error: max_rt,
        tol,
        item_i: max_transverse <= tol,
        item_ii: max_sens <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::build_hierarchy;

    fn vf(c: &[&str], v: &[&str]) -> VectorField {
        VectorField::parse(c, v).unwrap()
    }

    #[test]
    fn translation_chart_is_exact() {
        let v = ["x", "y"];
        let t = build_hierarchy(&[vf(&["0", "0"], &v), vf(&["1", "0"], &v), vf(&["0", "1"], &v)], 1).unwrap();
        let chart = build_chart(&t, &[0.5, -0.5], 1.0, 1e-8, NewtonConfig::default(), FlowConfig::with_dt(0.1)).unwrap();
        assert_eq!(chart.n, 2);
        let x = chart.forward(&[0.25, 0.1]).unwrap();
        assert!((x[0] - 0.75).abs() < 1e-15 && (x[1] + 0.4).abs() < 1e-15);
        let back = chart.inverse(&x).unwrap();
        assert!((back[0] - 0.25).abs() < 1e-14 && (back[1] - 0.1).abs() < 1e-14);
        let samples = chart_samples(&chart, 10, 0.5, 3);
        let rep = verify_chart_structure(&chart, &t, &samples, 1e-3, 1e-12).unwrap();
        assert!(rep.item_i && rep.item_ii);
    }

    #[test]
    fn circle_chart_is_polar() {
        let v = ["x", "y"];
        let t = build_hierarchy(&[vf(&["-y", "x"], &v), vf(&["x", "y"], &v)], 1).unwrap();
        let chart = build_chart(&t, &[1.0, 0.0], 0.5, 1e-8, NewtonConfig::default(), FlowConfig::with_dt(1e-3)).unwrap();
        assert_eq!(chart.n, 1);
        assert!(matches!(chart.directions[1], ChartDirection::DriftPerp(_)));
        // e^{t1 V1} e^{t2 V0} (1,0) = e^{t1} (cos t2, sin t2)
        let x = chart.forward(&[0.2, 0.3]).unwrap();
        assert!((x[0] - 0.2f64.exp() * 0.3f64.cos()).abs() < 1e-10);
        assert!((x[1] - 0.2f64.exp() * 0.3f64.sin()).abs() < 1e-10);
    }

    #[test]
    fn rank_jump_is_rejected() {
        let v = ["x", "y"];
        let t = build_hierarchy(&[vf(&["-y", "x"], &v), vf(&["x", "y"], &v)], 1).unwrap();
        let err = build_chart(&t, &[0.0, 0.0], 0.5, 1e-8, NewtonConfig::default(), FlowConfig::default());
        assert!(matches!(err, Err(GeometryError::NotRegular(_))));
    }
}
