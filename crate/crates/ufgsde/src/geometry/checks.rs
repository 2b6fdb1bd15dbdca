use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{ConditionReport, GeometryError, PointRecord, SamplePlan, SkippedPoint};
use crate::dynamics::{flow, FlowConfig, SDESystem};
use crate::expr::{Expr, Program};
use crate::fields::{evaluate_columns, BracketTable, FieldError, Subset, VectorField};
use crate::linalg;

/// Evaluates `f` at every plan point in parallel; failures become skipped
/// points. Output order follows the plan.
pub(crate) fn per_point<F>(plan: &SamplePlan, f: F) -> (Vec<PointRecord>, Vec<SkippedPoint>)
where
    F: Fn(usize, &[f64]) -> Result<PointRecord, String> + Sync,
{
    let results: Vec<Result<PointRecord, SkippedPoint>> = plan
        .points()
        .into_par_iter()
        .enumerate()
        .map(|(i, p)| {
            f(i, &p).map_err(|error| SkippedPoint {
                index: i,
                point: p.clone(),
                error,
            })
        })
        .collect();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(s) => skipped.push(s),
        }
    }
    (records, skipped)
}

fn labelled(list: Vec<(crate::fields::MultiIndex, &VectorField)>) -> Vec<(String, &VectorField)> {
    list.into_iter().map(|(a, f)| (a.to_string(), f)).collect()
}

fn check_dim(table: &BracketTable, plan: &SamplePlan) -> Result<(), GeometryError> {
    if plan.dim() != table.dim() {
        return Err(GeometryError::Shape(format!(
            "plan has dimension {} but the system has {}",
            plan.dim(),
            table.dim()
        )));
    }
    Ok(())
}

/// Regresses every `V_[alpha]` with `m < ||alpha|| <= m+2` onto the `R_m`
/// frame at each sample point.
///
/// The regression is least squares on unit-normalized frame columns, so the
/// relative cutoff `rtol` is not dominated by column scale. The recorded
/// residual is `|r| / max(1, |V_[alpha](x)|)` maximized over targets and the
/// coefficient is the largest magnitude in the unnormalized solution.
pub fn check_ufg(
    table: &BracketTable,
    plan: &SamplePlan,
    m: usize,
    residual_tol: f64,
    coeff_blowup_threshold: f64,
    rtol: f64,
) -> Result<ConditionReport, GeometryError> {
    check_dim(table, plan)?;
    if m == 0 || m > table.level() {
        return Err(GeometryError::InvalidArgument(format!(
            "level {m} needs a table built to at least that level (table has {})",
            table.level()
        )));
    }
    let frame = labelled(table.distinct_in_range(0, m));
    let targets = labelled(table.distinct_in_range(m, m + 2));
    let (records, skipped) = per_point(plan, |i, x| {
        let f = evaluate_columns(&frame, x).map_err(|e| e.to_string())?;
        let t = evaluate_columns(&targets, x).map_err(|e| e.to_string())?;
        let mut rec = PointRecord::new(i, x.to_vec());
        rec.rank = Some(linalg::numerical_rank(&f, rtol));
        rec.singular = f.iter().all(|v| *v == 0.0);
        let mut worst_res: f64 = 0.0;
        let mut worst_coef: f64 = 0.0;
        if !rec.singular {
            for col in t.column_iter() {
                let b = DVector::from_column_slice(col.as_slice());
                let (c, r) = linalg::lstsq_equilibrated(&f, &b, rtol);
                worst_res = worst_res.max(r.norm() / b.norm().max(1.0));
                worst_coef = worst_coef.max(c.amax());
            }
        }
        rec.residual = worst_res;
        rec.max_coefficient = Some(worst_coef);
        rec.violated = !rec.singular && !(worst_res <= residual_tol);
        Ok(rec)
    });
    Ok(ConditionReport::finish(
        "ufg",
        Some(m),
        None,
        residual_tol,
        Some(coeff_blowup_threshold),
        records,
        skipped,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HormanderVariant {
    /// Full rank of `R_m` together with `V0`.
    Hc,
    /// Full rank of `R_m` alone.
    Phc,
}

/// Full-rank test of the frame at every sample point. Points where the
/// frame vanishes count as violations here, since rank zero is a rank
/// deficiency.
pub fn check_hormander(
    table: &BracketTable,
    plan: &SamplePlan,
    variant: HormanderVariant,
    rtol: f64,
) -> Result<ConditionReport, GeometryError> {
    check_dim(table, plan)?;
    let n = table.dim();
    let subset = match variant {
        HormanderVariant::Hc => Subset::RmWithDrift,
        HormanderVariant::Phc => Subset::Rm,
    };
    let (records, skipped) = per_point(plan, |i, x| {
        let f = table.evaluate_frame(subset, x).map_err(|e| e.to_string())?;
        let s = linalg::singular_values(&f);
        let rank = linalg::numerical_rank(&f, rtol);
        let mut rec = PointRecord::new(i, x.to_vec());
        rec.rank = Some(rank);
        rec.singular = f.iter().all(|v| *v == 0.0);
        rec.min_singular_value = Some(if s.len() >= n { s[n - 1] } else { 0.0 });
        rec.residual = (n - rank.min(n)) as f64;
        rec.violated = rank < n;
        Ok(rec)
    });
    let name = match variant {
        HormanderVariant::Hc => "hc",
        HormanderVariant::Phc => "phc",
    };
    Ok(ConditionReport::finish(
        name,
        Some(table.level()),
        None,
        rtol,
        None,
        records,
        skipped,
    ))
}

/// Kalman controllability test: rank of `[Q, AQ, .., A^{N-1}Q]` against `N`.
pub fn check_kalman(a: &DMatrix<f64>, q: &DMatrix<f64>, rtol: f64) -> Result<(bool, usize), GeometryError> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || n == 0 {
        return Err(GeometryError::Shape(format!(
            "A is {}x{} and Q is {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let k = q.ncols();
    let mut ctrb = DMatrix::zeros(n, n * k);
    let mut block = q.clone();
    for j in 0..n {
        ctrb.columns_mut(j * k, k).copy_from(&block);
        block = a * block;
    }
    let rank = linalg::numerical_rank(&ctrb, rtol);
    Ok((rank == n, rank))
}

/// Options for [`check_lyapunov`].
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovOptions {
    /// For systems of the form ODE+SDE whose coordinates `n..N` follow an
    /// autonomous ODE, `Some(n)` evaluates the generator at
    /// `(z, zeta_t)` along that ODE started from each sample point.
    pub ode_block: Option<usize>,
    /// Times along the ODE; ignored without `ode_block`.
    pub times: Vec<f64>,
    /// Slack `tol * (1 + |C1| + C2 |phi|)` allowed in the inequality.
    pub tol: f64,
    pub flow: FlowConfig,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        LyapunovOptions {
            ode_block: None,
            times: vec![0.0],
            tol: 1e-10,
            flow: FlowConfig::with_dt(1e-3),
        }
    }
}

/// Symbolic generator `L phi = V0 phi + sum_i Vi (Vi phi)`.
pub fn generator(system: &SDESystem, phi: &Expr) -> Expr {
    let mut acc = system.drift.apply(phi);
    for v in &system.noise {
        let inner = v.apply(phi);
        acc = crate::fields::expr_add(acc, v.apply(&inner));
    }
    acc
}

/// Tests `L phi <= C1 - C2 phi` at the sample points (or along the ODE
/// part of the dynamics started there).
pub fn check_lyapunov(
    system: &SDESystem,
    phi: &Expr,
    plan: &SamplePlan,
    c1: f64,
    c2: f64,
    options: &LyapunovOptions,
) -> Result<ConditionReport, GeometryError> {
    let n = system.dim();
    if plan.dim() != n {
        return Err(GeometryError::Shape(format!("plan has dimension {}, system {n}", plan.dim())));
    }
    if let Some(var) = phi.max_var() {
        if var >= n {
            return Err(FieldError::VariableOutOfRange { component: 0, index: var, dim: n }.into());
        }
        if let Some(block) = options.ode_block {
            if var >= block {
                return Err(GeometryError::InvalidArgument(
                    "phi must depend only on the SDE coordinates".into(),
                ));
            }
        }
    }
    let lphi = Program::compile(&generator(system, phi));
    let phi_p = Program::compile(phi);
    let times: Vec<f64> = match options.ode_block {
        Some(_) => options.times.clone(),
        None => vec![0.0],
    };
    let (records, skipped) = per_point(plan, |i, x| {
        let mut rec = PointRecord::new(i, x.to_vec());
        let mut worst = f64::NEG_INFINITY;
        for &t in &times {
            let point = match options.ode_block {
                Some(block) if t != 0.0 => {
                    let moved = flow(&system.drift, x, t, &options.flow).map_err(|e| e.to_string())?;
                    let mut p = x.to_vec();
                    p[block..].copy_from_slice(&moved[block..]);
                    p
                }
                _ => x.to_vec(),
            };
            let l = lphi.eval(&point);
            let ph = phi_p.eval(&point);
            if !l.is_finite() || !ph.is_finite() {
                return Err(format!("generator not finite at {point:?}"));
            }
            let slack = options.tol * (1.0 + c1.abs() + c2.abs() * ph.abs());
            worst = worst.max(l - (c1 - c2 * ph) - slack);
        }
        rec.residual = worst;
        rec.violated = worst > 0.0;
        Ok(rec)
    });
    Ok(ConditionReport::finish(
        "lyapunov",
        None,
        None,
        options.tol,
        None,
        records,
        skipped,
    ))
}
