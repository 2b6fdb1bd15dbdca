use super::checks::per_point;
use super::{ConditionReport, GeometryError, PointRecord, SamplePlan};
use crate::expr::{differentiate, Expr, Program};
use crate::fields::{expr_add, expr_mul, expr_sub, BracketTable, Field, MultiIndex, VectorField};
use crate::linalg;

fn validate(table: &BracketTable, plan: &SamplePlan, lambda0: f64, tol: f64) -> Result<(), GeometryError> {
    if plan.dim() != table.dim() {
        return Err(GeometryError::Shape(format!(
            "plan has dimension {} but the system has {}",
            plan.dim(),
            table.dim()
        )));
    }
    if !(lambda0 > 0.0) {
        return Err(GeometryError::InvalidArgument(format!("lambda0 must be positive, got {lambda0}")));
    }
    if !(tol >= 0.0) {
        return Err(GeometryError::InvalidArgument(format!("tolerance must be non-negative, got {tol}")));
    }
    Ok(())
}

/// Pointwise test of one pair `(a, b)`: returns `(normalized top
/// eigenvalue, certified lambda)` with threshold `tol (1 + |a||b|)`.
fn test_pair(a: &[f64], b: &[f64], lambda0: f64, tol: f64) -> (f64, f64, bool) {
    let scale = 1.0 + linalg::norm(a) * linalg::norm(b);
    let u: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + lambda0 * y).collect();
    let eig = linalg::max_eig_sym_outer(&u, b);
    let certified = linalg::certified_lambda(a, b, tol * scale);
    (eig / scale, certified, eig > tol * scale)
}

fn finish_pairs(
    name: &str,
    table: &BracketTable,
    plan: &SamplePlan,
    lambda0: f64,
    tol: f64,
    eval: impl Fn(&[f64]) -> Result<Vec<(Vec<f64>, Vec<f64>)>, String> + Sync,
) -> ConditionReport {
    let (records, skipped) = per_point(plan, |i, x| {
        let pairs = eval(x)?;
        let mut rec = PointRecord::new(i, x.to_vec());
        let mut worst = 0.0f64;
        let mut top = f64::NEG_INFINITY;
        let mut cert = f64::INFINITY;
        let mut violated = false;
        let mut all_zero = true;
        for (a, b) in &pairs {
            if b.iter().any(|v| *v != 0.0) {
                all_zero = false;
            }
            let (e, c, bad) = test_pair(a, b, lambda0, tol);
            worst = worst.max(e);
            top = top.max(e);
            cert = cert.min(c);
            violated |= bad;
        }
        rec.residual = worst;
        rec.max_eigenvalue = Some(if top.is_finite() { top } else { 0.0 });
        rec.certified_lambda0 = Some(cert);
        rec.singular = all_zero;
        rec.violated = violated;
        Ok(rec)
    });
    ConditionReport::finish(name, Some(table.level()), Some(lambda0), tol, None, records, skipped)
}

/// Obtuse angle condition: for every `alpha` in `A_m`, with
/// `a = V_[alpha*0](x)` and `b = V_[alpha](x)`, the top eigenvalue of
/// `sym((a + lambda0 b) b^T)` must not exceed `tol (1 + |a||b|)`. Each
/// record also carries the largest `lambda0` that passes at that point.
pub fn check_oac(
    table: &BracketTable,
    plan: &SamplePlan,
    lambda0: f64,
    tol: f64,
) -> Result<ConditionReport, GeometryError> {
    validate(table, plan, lambda0, tol)?;
    let m = table.level();
    let mut pairs: Vec<(VectorField, VectorField)> = Vec::new();
    for alpha in table.indices_up_to(m) {
        let b = table.get(&alpha).expect("indexed entry").clone();
        if b.is_zero() {
            continue;
        }
        let a = table.get(&alpha.extend(0)).expect("alpha*0 has length <= m+2").clone();
        if !pairs.iter().any(|(pa, pb)| *pa == a && *pb == b) {
            pairs.push((a, b));
        }
    }
    Ok(finish_pairs("oac", table, plan, lambda0, tol, |x| {
        pairs
            .iter()
            .map(|(a, b)| {
                let av = a.eval_vec(x);
                let bv = b.eval_vec(x);
                if av.iter().chain(&bv).any(|v| !v.is_finite()) {
                    Err(format!("bracket not finite at {x:?}"))
                } else {
                    Ok((av, bv))
                }
            })
            .collect()
    }))
}

/// Coefficients of a second-order operator `S : D^2 + g . D` with `S`
/// symmetric, flattened as `(S_ii, 2 S_ij for i < j, g_j)`.
struct SecondOrder {
    s: Vec<Vec<Expr>>,
    g: Vec<Expr>,
}

impl SecondOrder {
    /// `V_[alpha] V_[beta] = sym(b c^T) : D^2 + ((Dc) b) . D`.
    fn product(b: &VectorField, c: &VectorField) -> Self {
        let n = b.dim();
        let (bc, cc) = (b.components(), c.components());
        let half = Expr::Const(0.5);
        let s = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let sum = expr_add(expr_mul(bc[i].clone(), cc[j].clone()), expr_mul(bc[j].clone(), cc[i].clone()));
                        expr_mul(half.clone(), sum)
                    })
                    .collect()
            })
            .collect();
        let g = cc.iter().map(|cj| b.apply(cj)).collect();
        SecondOrder { s, g }
    }

    /// `[P, V]` for a first-order field `V` with components `v`:
    /// second-order part `Dv S + S Dv^T - (v . D) S`, first-order part
    /// `S : D^2 v + Dv g - Dg v`.
    fn commutator(&self, v: &VectorField) -> Self {
        let n = self.g.len();
        let dv = v.jacobian(); // dv[k][i] = d_i v_k
        let s = (0..n)
            .map(|k| {
                (0..n)
                    .map(|j| {
                        let mut acc = Expr::zero();
                        for i in 0..n {
                            acc = expr_add(acc, expr_mul(dv[k][i].clone(), self.s[i][j].clone()));
                            acc = expr_add(acc, expr_mul(self.s[k][i].clone(), dv[j][i].clone()));
                        }
                        expr_sub(acc, v.apply(&self.s[k][j]))
                    })
                    .collect()
            })
            .collect();
        let g = (0..n)
            .map(|k| {
                let mut acc = Expr::zero();
                for i in 0..n {
                    for j in 0..n {
                        if self.s[i][j].is_zero() {
                            continue;
                        }
                        let dij = differentiate(&dv[k][i], j);
                        acc = expr_add(acc, expr_mul(self.s[i][j].clone(), dij));
                    }
                    acc = expr_add(acc, expr_mul(dv[k][i].clone(), self.g[i].clone()));
                }
                expr_sub(acc, v.apply(&self.g[k]))
            })
            .collect();
        SecondOrder { s, g }
    }

    fn flatten(&self) -> Vec<Expr> {
        let n = self.g.len();
        let mut out = Vec::new();
        for i in 0..n {
            out.push(self.s[i][i].clone());
        }
        for i in 0..n {
            for j in i + 1..n {
                out.push(expr_mul(Expr::Const(2.0), self.s[i][j].clone()));
            }
        }
        out.extend(self.g.iter().cloned());
        out
    }

    fn is_zero(&self) -> bool {
        self.g.iter().all(Expr::is_zero) && self.s.iter().flatten().all(Expr::is_zero)
    }
}

/// Second-order obtuse angle condition over pairs `alpha != beta` in
/// `A_m`, neither a bare noise index. `u2` are the coefficients of
/// `V_[alpha] V_[beta]` and `u1` those of `[V_[alpha] V_[beta], V0]`; the
/// test is the first-order one applied to `(a, b) = (u1, u2)`.
pub fn check_oac2(
    table: &BracketTable,
    plan: &SamplePlan,
    lambda0: f64,
    tol: f64,
) -> Result<ConditionReport, GeometryError> {
    validate(table, plan, lambda0, tol)?;
    let admissible: Vec<MultiIndex> = table
        .indices_up_to(table.level())
        .into_iter()
        .filter(|a| !a.is_noise_singleton())
        .collect();
    let mut seen: Vec<(VectorField, VectorField)> = Vec::new();
    let mut programs: Vec<(Vec<Program>, Vec<Program>)> = Vec::new();
    for alpha in &admissible {
        for beta in &admissible {
            if alpha == beta {
                continue;
            }
            let b = table.get(alpha).expect("indexed entry");
            let c = table.get(beta).expect("indexed entry");
            if b.is_zero() || c.is_zero() || seen.iter().any(|(x, y)| x == b && y == c) {
                continue;
            }
            seen.push((b.clone(), c.clone()));
            let p = SecondOrder::product(b, c);
            if p.is_zero() {
                continue;
            }
            let comm = p.commutator(table.drift());
            let compile = |e: Vec<Expr>| e.iter().map(Program::compile).collect::<Vec<_>>();
            programs.push((compile(comm.flatten()), compile(p.flatten())));
        }
    }
    Ok(finish_pairs("oac2", table, plan, lambda0, tol, |x| {
        programs
            .iter()
            .map(|(u1, u2)| {
                let a: Vec<f64> = u1.iter().map(|p| p.eval(x)).collect();
                let b: Vec<f64> = u2.iter().map(|p| p.eval(x)).collect();
                if a.iter().chain(&b).any(|v| !v.is_finite()) {
                    Err(format!("operator coefficients not finite at {x:?}"))
                } else {
                    Ok((a, b))
                }
            })
            .collect()
    }))
}
