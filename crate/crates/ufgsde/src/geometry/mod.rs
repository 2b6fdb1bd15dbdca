//! Distribution ranks, the drift decomposition `V0 = V0par + V0perp`, numeric
//! condition checkers and local charts.
//!
//! The obtuse angle tests use the following elimination. Since
//! `V f = <b, grad f>` and `grad f(x)` ranges over all of `R^N`, the
//! inequality `(a.g)(b.g) <= -lambda (b.g)^2` for every `g` is the quadratic
//! form `g^T (a + lambda b) b^T g <= 0`, which holds for every `g` exactly
//! when `sym((a + lambda b) b^T)` is negative semidefinite. The second-order
//! version applies the same argument to the jet `(d_ij f, d_j f)`, which is
//! likewise arbitrary.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsError;
use crate::fields::{evaluate_columns, BracketTable, Field, FieldError, Subset};
use crate::linalg;

mod chart;
mod checks;
mod oac;

pub use chart::{build_chart, chart_samples, verify_chart_structure, Chart, ChartDirection, ChartReport, NewtonConfig};
pub use checks::{check_hormander, check_kalman, check_lyapunov, check_ufg, generator, HormanderVariant, LyapunovOptions};
pub use oac::{check_oac, check_oac2};

/// Default relative rank cutoff.
pub const DEFAULT_RTOL: f64 = 1e-8;
/// Default coefficient magnitude above which a UFG regression is suspect.
pub const DEFAULT_BLOWUP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid sample plan: {0}")]
    InvalidPlan(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("rank is not locally constant near the chart center: {0}")]
    NotRegular(String),
    #[error("Newton inversion did not converge, last residual {residual:e}")]
    NewtonDiverged { residual: f64 },
    #[error("point lies outside the chart domain")]
    OutsideDomain,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

type Exclusion = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

#[derive(Clone)]
enum Source {
    Grid(usize),
    Random { count: usize, seed: u64 },
    List(Vec<Vec<f64>>),
}

/// Finite set of sample points standing in for "every x".
#[derive(Clone)]
pub struct SamplePlan {
    bounds: Vec<(f64, f64)>,
    source: Source,
    exclude: Option<Exclusion>,
}

impl fmt::Debug for SamplePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SamplePlan")
            .field("bounds", &self.bounds)
            .field("points", &self.points().len())
            .finish()
    }
}

fn check_bounds(bounds: &[(f64, f64)]) -> Result<(), GeometryError> {
    if bounds.is_empty() {
        return Err(GeometryError::InvalidPlan("box has no axes".into()));
    }
    for (i, (lo, hi)) in bounds.iter().enumerate() {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(GeometryError::InvalidPlan(format!("axis {i}: need lo < hi, got {lo}:{hi}")));
        }
    }
    Ok(())
}

impl SamplePlan {
    /// Tensor grid with `n` points per axis including both endpoints; a
    /// single point sits at the midpoint.
    pub fn grid(bounds: Vec<(f64, f64)>, n: usize) -> Result<Self, GeometryError> {
        check_bounds(&bounds)?;
        if n == 0 {
            return Err(GeometryError::InvalidPlan("grid needs at least one point per axis".into()));
        }
        Ok(SamplePlan {
            bounds,
            source: Source::Grid(n),
            exclude: None,
        })
    }

    /// `count` uniform points in the box from a seeded stream.
    pub fn random(bounds: Vec<(f64, f64)>, count: usize, seed: u64) -> Result<Self, GeometryError> {
        check_bounds(&bounds)?;
        if count == 0 {
            return Err(GeometryError::InvalidPlan("need at least one point".into()));
        }
        Ok(SamplePlan {
            bounds,
            source: Source::Random { count, seed },
            exclude: None,
        })
    }

    /// Explicit points; the box is their bounding box.
    pub fn list(points: Vec<Vec<f64>>) -> Result<Self, GeometryError> {
        let first = points
            .first()
            .ok_or_else(|| GeometryError::InvalidPlan("empty point list".into()))?;
        let n = first.len();
        if n == 0 || points.iter().any(|p| p.len() != n || p.iter().any(|v| !v.is_finite())) {
            return Err(GeometryError::InvalidPlan("points must be finite and share one dimension".into()));
        }
        let bounds = (0..n)
            .map(|i| {
                let lo = points.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
                let hi = points.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            })
            .collect();
        Ok(SamplePlan {
            bounds,
            source: Source::List(points),
            exclude: None,
        })
    }

    /// Drops points for which `predicate` holds.
    pub fn excluding(mut self, predicate: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        self.exclude = Some(Arc::new(predicate));
        self
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Grid size per axis, when the plan is a grid.
    pub fn grid_size(&self) -> Option<usize> {
        match self.source {
            Source::Grid(n) => Some(n),
            _ => None,
        }
    }

    /// The sample points in a fixed order, exclusions removed.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let raw: Vec<Vec<f64>> = match &self.source {
            Source::List(p) => p.clone(),
            Source::Random { count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..*count)
                    .map(|_| self.bounds.iter().map(|(lo, hi)| rng.gen_range(*lo..*hi)).collect())
                    .collect()
            }
            Source::Grid(n) => {
                let axes: Vec<Vec<f64>> = self
                    .bounds
                    .iter()
                    .map(|(lo, hi)| {
                        if *n == 1 {
                            vec![0.5 * (lo + hi)]
                        } else {
                            (0..*n).map(|k| linalg::grid_point(*lo, *hi, k, *n)).collect()
                        }
                    })
                    .collect();
                let total: usize = axes.iter().map(Vec::len).product();
                (0..total)
                    .map(|mut idx| {
                        let mut p = vec![0.0; axes.len()];
                        for i in (0..axes.len()).rev() {
                            p[i] = axes[i][idx % axes[i].len()];
                            idx /= axes[i].len();
                        }
                        p
                    })
                    .collect()
            }
        };
        match &self.exclude {
            Some(f) => raw.into_iter().filter(|p| !f(p)).collect(),
            None => raw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    SatisfiedOnSamples,
    Violated,
    Suspect,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::SatisfiedOnSamples => "satisfied_on_samples",
            Verdict::Violated => "violated",
            Verdict::Suspect => "suspect",
        })
    }
}

/// Per-point outcome of a condition check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub index: usize,
    pub point: Vec<f64>,
    /// The tested quantity, normalized so that it is compared to the tolerance.
    pub residual: f64,
    pub max_coefficient: Option<f64>,
    pub max_eigenvalue: Option<f64>,
    pub min_singular_value: Option<f64>,
    pub rank: Option<usize>,
    pub certified_lambda0: Option<f64>,
    /// Every frame column vanishes here.
    pub singular: bool,
    pub violated: bool,
}

impl PointRecord {
    pub(crate) fn new(index: usize, point: Vec<f64>) -> Self {
        PointRecord {
            index,
            point,
            residual: 0.0,
            max_coefficient: None,
            max_eigenvalue: None,
            min_singular_value: None,
            rank: None,
            certified_lambda0: None,
            singular: false,
            violated: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub index: usize,
    pub point: Vec<f64>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub level: Option<usize>,
    pub lambda0: Option<f64>,
    pub tolerance: f64,
    pub blowup_threshold: Option<f64>,
    pub verdict: Verdict,
    pub worst_point: Option<Vec<f64>>,
    /// Smallest certified `lambda0` over the non-skipped points, if computed.
    pub certified_lambda0: Option<f64>,
    pub singular_points: usize,
    pub skipped: Vec<SkippedPoint>,
    pub records: Vec<PointRecord>,
}

impl ConditionReport {
    /// Assembles a report; records are sorted by index before the verdict.
    pub(crate) fn finish(
        condition: &str,
        level: Option<usize>,
        lambda0: Option<f64>,
        tolerance: f64,
        blowup_threshold: Option<f64>,
        mut records: Vec<PointRecord>,
        mut skipped: Vec<SkippedPoint>,
    ) -> Self {
        records.sort_by_key(|r| r.index);
        skipped.sort_by_key(|s| s.index);
        let violated = records.iter().any(|r| r.violated);
        let coef = |r: &PointRecord| r.max_coefficient.unwrap_or(0.0);
        let suspect = !violated
            && blowup_threshold.is_some_and(|t| records.iter().any(|r| coef(r) > t));
        let verdict = if violated {
            Verdict::Violated
        } else if suspect {
            Verdict::Suspect
        } else {
            Verdict::SatisfiedOnSamples
        };
        let pick = |key: &dyn Fn(&PointRecord) -> f64, filter: &dyn Fn(&PointRecord) -> bool| {
            records
                .iter()
                .filter(|r| filter(r))
                .fold(None::<&PointRecord>, |best, r| match best {
                    Some(b) if key(b) >= key(r) => Some(b),
                    _ => Some(r),
                })
                .map(|r| r.point.clone())
        };
        let worst_point = match verdict {
            Verdict::Violated => pick(&|r| r.residual, &|r| r.violated),
            Verdict::Suspect => pick(&coef, &|_| true),
            Verdict::SatisfiedOnSamples => pick(&|r| r.residual, &|r| !r.singular),
        };
        let certified_lambda0 = records
            .iter()
            .filter_map(|r| r.certified_lambda0)
            .reduce(f64::min);
        ConditionReport {
            condition: condition.to_string(),
            level,
            lambda0,
            tolerance,
            blowup_threshold,
            verdict,
            worst_point,
            certified_lambda0,
            singular_points: records.iter().filter(|r| r.singular).count(),
            skipped,
            records,
        }
    }

    pub fn max_residual(&self) -> f64 {
        self.records.iter().map(|r| r.residual).fold(0.0, f64::max)
    }

    pub fn max_coefficient(&self) -> f64 {
        self.records
            .iter()
            .filter_map(|r| r.max_coefficient)
            .fold(0.0, f64::max)
    }
}

/// Numerical rank of the `R_m` frame (`Subset::Rm`, the distribution
/// `Delta`) or of `R_m` with `V0` (`Subset::RmWithDrift`, `Delta_0`).
pub fn rank_at(table: &BracketTable, which: Subset, x: &[f64], rtol: f64) -> Result<usize, FieldError> {
    let frame = table.evaluate_frame(which, x)?;
    Ok(linalg::numerical_rank(&frame, rtol))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftDecomposition {
    pub parallel: Vec<f64>,
    pub perpendicular: Vec<f64>,
    /// `max_beta |<V0perp, V_[beta]>| / (1 + |V0perp|)`.
    pub residual: f64,
}

/// Splits `V0(x)` into its projection onto the `R_m` frame's column space
/// and the orthogonal remainder `V0perp`.
pub fn decompose_drift(table: &BracketTable, x: &[f64], rtol: f64) -> Result<DriftDecomposition, FieldError> {
    let frame = table.evaluate_frame(Subset::Rm, x)?;
    let v0 = evaluate_columns(&[("(0)".to_string(), table.drift())], x)?;
    let v0 = DVector::from_column_slice(v0.as_slice());
    Ok(split(&frame, &v0, rtol))
}

pub(crate) fn split(frame: &DMatrix<f64>, v0: &DVector<f64>, rtol: f64) -> DriftDecomposition {
    let parallel = linalg::project_onto_columns(frame, v0, rtol);
    let perp = v0 - &parallel;
    let np = perp.norm();
    let residual = frame
        .column_iter()
        .map(|c| c.dot(&perp).abs())
        .fold(0.0, f64::max)
        / (1.0 + np);
    DriftDecomposition {
        parallel: parallel.iter().copied().collect(),
        perpendicular: perp.iter().copied().collect(),
        residual,
    }
}

/// `V0perp` as a numerically evaluated field: the drift minus its projection
/// onto the `R_m` frame, recomputed at every point.
#[derive(Debug, Clone)]
pub struct ProjectedDrift {
    table: BracketTable,
    rtol: f64,
}

impl ProjectedDrift {
    pub fn new(table: BracketTable, rtol: f64) -> Self {
        ProjectedDrift { table, rtol }
    }
}

impl Field for ProjectedDrift {
    fn dim(&self) -> usize {
        self.table.dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match decompose_drift(&self.table, x, self.rtol) {
            Ok(d) => out.copy_from_slice(&d.perpendicular),
            Err(_) => out.fill(f64::NAN),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{build_hierarchy, VectorField};

    fn table(fields: &[(&[&str], &[&str])], m: usize) -> BracketTable {
        let base: Vec<VectorField> = fields
            .iter()
            .map(|(c, v)| VectorField::parse(c, v).unwrap())
            .collect();
        build_hierarchy(&base, m).unwrap()
    }

    const XY: &[&str] = &["x", "y"];
    const XYZ: &[&str] = &["x", "y", "z"];

    fn circles() -> BracketTable {
        table(&[(&["-y", "x"], XY), (&["x", "y"], XY)], 1)
    }

    fn heisenberg() -> BracketTable {
        table(
            &[
                (&["-x", "-y", "-2*z"], XYZ),
                (&["0", "0", "-y"], XYZ),
                (&["0", "1", "x"], XYZ),
            ],
            2,
        )
    }

    #[test]
    fn grid_plan_layout() {
        let p = SamplePlan::grid(vec![(0.0, 1.0), (-1.0, 1.0)], 3).unwrap();
        let pts = p.points();
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[0], vec![0.0, -1.0]);
        assert_eq!(pts[1], vec![0.0, 0.0]);
        assert_eq!(pts[8], vec![1.0, 1.0]);
        let q = p.excluding(|x| x[0] == 0.0);
        assert_eq!(q.points().len(), 6);
        assert!(SamplePlan::grid(vec![(1.0, 1.0)], 3).is_err());
    }

    #[test]
    fn circle_ranks_and_decomposition() {
        let t = circles();
        assert_eq!(rank_at(&t, Subset::Rm, &[1.0, 0.0], DEFAULT_RTOL).unwrap(), 1);
        assert_eq!(rank_at(&t, Subset::RmWithDrift, &[1.0, 0.0], DEFAULT_RTOL).unwrap(), 2);
        assert_eq!(rank_at(&t, Subset::Rm, &[0.0, 0.0], DEFAULT_RTOL).unwrap(), 0);
        assert_eq!(rank_at(&t, Subset::RmWithDrift, &[0.0, 0.0], DEFAULT_RTOL).unwrap(), 0);
        let d = decompose_drift(&t, &[0.3, -1.2], DEFAULT_RTOL).unwrap();
        assert!((d.perpendicular[0] - 1.2).abs() < 1e-14 && (d.perpendicular[1] - 0.3).abs() < 1e-14);
        assert!(d.residual < 1e-14);
    }

    #[test]
    fn heisenberg_ranks_and_decomposition() {
        let t = heisenberg();
        assert_eq!(rank_at(&t, Subset::RmWithDrift, &[1.0, 0.0, 0.0], DEFAULT_RTOL).unwrap(), 3);
        assert_eq!(rank_at(&t, Subset::RmWithDrift, &[0.0, 1.0, 1.0], DEFAULT_RTOL).unwrap(), 2);
        let x = [0.7, -0.3, 2.0];
        let d = decompose_drift(&t, &x, DEFAULT_RTOL).unwrap();
        assert!((d.perpendicular[0] + 0.7).abs() < 1e-12);
        assert!(d.perpendicular[1].abs() < 1e-12 && d.perpendicular[2].abs() < 1e-12);
    }
}
