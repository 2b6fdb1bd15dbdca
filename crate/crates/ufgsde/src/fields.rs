//! Vector-field algebra: Lie brackets, multi-indices and the bracket hierarchy.
//!
//! A field `V = sum_j V^j d_j` is stored as its component expressions. The
//! bracket is `[V,W]^j = sum_i (V^i d_i W^j - W^i d_i V^j)`.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;

use crate::expr::{self, differentiate, evaluate, parse_expression, Expr, ExprError, Program};
use crate::expr::{simplify, BinaryOp};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FieldError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("component {component} references variable {index} but dim is {dim}")]
    VariableOutOfRange {
        component: usize,
        index: usize,
        dim: usize,
    },
    #[error("field must have at least one component")]
    Empty,
    #[error("evaluation of V_{alpha} failed: {source}")]
    Evaluation { alpha: String, source: ExprError },
    #[error("bracket hierarchy exceeds the entry cap of {cap}")]
    HierarchyTooLarge { cap: usize },
    #[error("invalid multi-index: {0}")]
    InvalidMultiIndex(String),
    #[error("hierarchy needs at least V0 and one noise field")]
    NoNoise,
}

/// Numerically evaluable vector field on R^N.
pub trait Field: Sync {
    fn dim(&self) -> usize;
    /// Writes the field value at `x` into `out`. Unchecked: out-of-domain
    /// points produce non-finite entries.
    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    fn eval_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }

    /// Row-major Jacobian `out[j*N + i] = d_i V^j(x)`. The default uses
    /// central differences with step `1e-6 * max(1, |x_i|)`.
    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for i in 0..n {
            let h = 1e-6 * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            self.eval_into(&xp, &mut fp);
            xp[i] = x[i] - h;
            self.eval_into(&xp, &mut fm);
            xp[i] = x[i];
            for j in 0..n {
                out[j * n + i] = (fp[j] - fm[j]) / (2.0 * h);
            }
        }
    }
}

/// Field defined by a closure.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> Field for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

#[derive(Debug)]
struct Compiled {
    components: Vec<Program>,
    jacobian: Vec<Vec<Expr>>,
    jacobian_programs: Vec<Program>,
}

/// Symbolic vector field with lazily compiled evaluators.
#[derive(Clone)]
pub struct VectorField {
    components: Arc<Vec<Expr>>,
    compiled: Arc<OnceLock<Compiled>>,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.components.iter().map(|c| c.to_string())).finish()
    }
}

impl PartialEq for VectorField {
    fn eq(&self, other: &Self) -> bool {
        self.components == other.components
    }
}

impl VectorField {
    /// Builds a field, simplifying each component. Variable indices must be
    /// below the number of components.
    pub fn new(components: Vec<Expr>) -> Result<Self, FieldError> {
        let dim = components.len();
        if dim == 0 {
            return Err(FieldError::Empty);
        }
        for (j, c) in components.iter().enumerate() {
            if let Some(index) = c.max_var() {
                if index >= dim {
                    return Err(FieldError::VariableOutOfRange {
                        component: j,
                        index,
                        dim,
                    });
                }
            }
        }
        Ok(Self::from_normal(components.iter().map(simplify).collect()))
    }

    fn from_normal(components: Vec<Expr>) -> Self {
        VectorField {
            components: Arc::new(components),
            compiled: Arc::new(OnceLock::new()),
        }
    }

    /// Parses one expression per component.
    pub fn parse<S: AsRef<str>, T: AsRef<str>>(
        texts: &[S],
        variable_names: &[T],
    ) -> Result<Self, ExprError> {
        let comps = texts
            .iter()
            .map(|t| parse_expression(t.as_ref(), variable_names))
            .collect::<Result<Vec<_>, _>>()?;
        if comps.len() != variable_names.len() {
            return Err(ExprError::VariableList(format!(
                "{} components for {} variables",
                comps.len(),
                variable_names.len()
            )));
        }
        VectorField::new(comps).map_err(|e| ExprError::VariableList(e.to_string()))
    }

    pub fn zero(dim: usize) -> Self {
        Self::from_normal(vec![Expr::zero(); dim])
    }

    /// Constant field `c`.
    pub fn constant(c: &[f64]) -> Self {
        Self::from_normal(c.iter().map(|&v| Expr::Const(v)).collect())
    }

    /// Linear field `x -> A x + b`.
    pub fn affine(a: &DMatrix<f64>, b: &[f64]) -> Self {
        let n = a.nrows();
        let comps = (0..n)
            .map(|j| {
                let mut acc = Expr::Const(b.get(j).copied().unwrap_or(0.0));
                for i in 0..a.ncols() {
                    let term = expr::simplify(&Expr::binary(
                        BinaryOp::Mul,
                        Expr::Const(a[(j, i)]),
                        Expr::Var(i),
                    ));
                    acc = simplify(&Expr::binary(BinaryOp::Add, acc, term));
                }
                acc
            })
            .collect();
        Self::from_normal(comps)
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Expr::is_zero)
    }

    fn compiled(&self) -> &Compiled {
        self.compiled.get_or_init(|| {
            let n = self.dim();
            let jacobian: Vec<Vec<Expr>> = self
                .components
                .iter()
                .map(|c| (0..n).map(|i| differentiate(c, i)).collect())
                .collect();
            let jacobian_programs = jacobian.iter().flatten().map(Program::compile).collect();
            Compiled {
                components: self.components.iter().map(Program::compile).collect(),
                jacobian,
                jacobian_programs,
            }
        })
    }

    /// Symbolic Jacobian, `jacobian()[j][i] = d_i V^j`.
    pub fn jacobian(&self) -> &[Vec<Expr>] {
        &self.compiled().jacobian
    }

    /// Row-major Jacobian `DV(x)` written into `out` (length N*N).
    pub fn eval_jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.compiled().jacobian_programs) {
            *o = p.eval(x);
        }
    }

    pub fn eval_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut buf = vec![0.0; n * n];
        self.eval_jacobian_into(x, &mut buf);
        DMatrix::from_row_slice(n, n, &buf)
    }

    /// Checked evaluation that reports domain errors.
    pub fn eval_checked(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.components.iter().map(|c| evaluate(c, x)).collect()
    }

    /// The first-order operator applied to a scalar: `V f = sum_i V^i d_i f`.
    pub fn apply(&self, f: &Expr) -> Expr {
        let mut acc = Expr::zero();
        for (i, vi) in self.components.iter().enumerate() {
            if vi.is_zero() {
                continue;
            }
            let term = expr_mul(vi.clone(), differentiate(f, i));
            acc = expr_add(acc, term);
        }
        acc
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::from_normal(
            self.components
                .iter()
                .map(|e| expr_mul(Expr::Const(c), e.clone()))
                .collect(),
        )
    }

    /// Pointwise product with a scalar expression.
    pub fn scale_by(&self, s: &Expr) -> Self {
        Self::from_normal(
            self.components
                .iter()
                .map(|e| expr_mul(s.clone(), e.clone()))
                .collect(),
        )
    }

    pub fn add(&self, other: &Self) -> Result<Self, FieldError> {
        self.zip(other, expr_add)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, FieldError> {
        self.zip(other, expr_sub)
    }

    fn zip(&self, other: &Self, f: fn(Expr, Expr) -> Expr) -> Result<Self, FieldError> {
        if self.dim() != other.dim() {
            return Err(FieldError::DimensionMismatch(self.dim(), other.dim()));
        }
        Ok(Self::from_normal(
            self.components
                .iter()
                .zip(other.components.iter())
                .map(|(a, b)| f(a.clone(), b.clone()))
                .collect(),
        ))
    }

    /// Canonical component strings with the given variable names.
    pub fn to_strings(&self, names: &[String]) -> Vec<String> {
        self.components
            .iter()
            .map(|c| c.to_canonical_string(names))
            .collect()
    }

    fn key(&self) -> String {
        self.to_strings(&[]).join(";")
    }
}

impl Field for VectorField {
    fn dim(&self) -> usize {
        self.components.len()
    }
    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        self.eval_jacobian_into(x, out)
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.compiled().components) {
            *o = p.eval(x);
        }
    }
}

pub(crate) fn expr_add(a: Expr, b: Expr) -> Expr {
    expr::simplify(&Expr::binary(BinaryOp::Add, a, b))
}
pub(crate) fn expr_sub(a: Expr, b: Expr) -> Expr {
    expr::simplify(&Expr::binary(BinaryOp::Sub, a, b))
}
pub(crate) fn expr_mul(a: Expr, b: Expr) -> Expr {
    expr::simplify(&Expr::binary(BinaryOp::Mul, a, b))
}

/// Symbolic Lie bracket `[V, W] = VW - WV`, simplified.
pub fn lie_bracket(v: &VectorField, w: &VectorField) -> Result<VectorField, FieldError> {
    if v.dim() != w.dim() {
        return Err(FieldError::DimensionMismatch(v.dim(), w.dim()));
    }
    let n = v.dim();
    if v.is_zero() || w.is_zero() {
        return Ok(VectorField::zero(n));
    }
    let (jv, jw) = (v.jacobian(), w.jacobian());
    let comps = (0..n)
        .map(|j| {
            let mut acc = Expr::zero();
            for i in 0..n {
                let t1 = expr_mul(v.components[i].clone(), jw[j][i].clone());
                let t2 = expr_mul(w.components[i].clone(), jv[j][i].clone());
                acc = expr_add(acc, expr_sub(t1, t2));
            }
            acc
        })
        .collect();
    Ok(VectorField::from_normal(comps))
}

/// Tuple over `{0..d}` other than `(0)`, ordered by `(length, entries)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    entries: Vec<usize>,
    length: usize,
}

impl MultiIndex {
    pub fn new(entries: Vec<usize>) -> Result<Self, FieldError> {
        if entries.is_empty() {
            return Err(FieldError::InvalidMultiIndex("empty tuple".into()));
        }
        if entries == [0] {
            return Err(FieldError::InvalidMultiIndex("(0) is excluded".into()));
        }
        Ok(Self::raw(entries))
    }

    // Allows `(0)`, used only as a building block inside the hierarchy.
    fn raw(entries: Vec<usize>) -> Self {
        let length = entries.len() + entries.iter().filter(|&&e| e == 0).count();
        MultiIndex { entries, length }
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    /// `||alpha||`: tuple size plus number of zero entries.
    pub fn length(&self) -> usize {
        self.length
    }

    /// `alpha * i`.
    pub fn extend(&self, i: usize) -> MultiIndex {
        let mut e = self.entries.clone();
        e.push(i);
        Self::raw(e)
    }

    /// True for `(i)` with `i >= 1`.
    pub fn is_noise_singleton(&self) -> bool {
        self.entries.len() == 1 && self.entries[0] != 0
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.length, &self.entries).cmp(&(other.length, &other.entries))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.entries.iter().map(|e| e.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

pub fn multiindex_length(alpha: &MultiIndex) -> usize {
    alpha.length()
}

/// Which frame to evaluate: `R_m`, or `R_m` together with `V0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    Rm,
    RmWithDrift,
}

pub const DEFAULT_ENTRY_CAP: usize = 5000;

/// `{V_[alpha] : ||alpha|| <= m+2}` in canonical order.
///
/// Structurally identical fields are stored once; every multi-index keeps
/// its own entry pointing at the shared field. Indices whose bracket
/// vanishes identically are not listed: every extension of them vanishes
/// too, and [`BracketTable::get`] answers them with the zero field.
#[derive(Debug, Clone)]
pub struct BracketTable {
    base: Vec<VectorField>,
    level: usize,
    zero: VectorField,
    entries: Vec<(MultiIndex, usize)>,
    fields: Vec<VectorField>,
    lookup: HashMap<MultiIndex, usize>,
}

/// Builds the hierarchy with the default entry cap.
pub fn build_hierarchy(base: &[VectorField], m: usize) -> Result<BracketTable, FieldError> {
    build_hierarchy_with_cap(base, m, DEFAULT_ENTRY_CAP)
}

pub fn build_hierarchy_with_cap(
    base: &[VectorField],
    m: usize,
    cap: usize,
) -> Result<BracketTable, FieldError> {
    if base.len() < 2 {
        return Err(FieldError::NoNoise);
    }
    if m < 1 {
        return Err(FieldError::InvalidMultiIndex("level m must be >= 1".into()));
    }
    let n = base[0].dim();
    for f in base {
        if f.dim() != n {
            return Err(FieldError::DimensionMismatch(n, f.dim()));
        }
    }
    let d = base.len() - 1;
    let max_len = m + 2;

    let mut fields: Vec<VectorField> = Vec::new();
    let mut by_key: HashMap<String, usize> = HashMap::new();
    let mut intern = |f: VectorField, fields: &mut Vec<VectorField>| -> usize {
        *by_key.entry(f.key()).or_insert_with(|| {
            fields.push(f);
            fields.len() - 1
        })
    };

    // Parents by length; `(0)` participates as a parent but is not stored.
    let mut by_length: Vec<Vec<(MultiIndex, usize)>> = vec![Vec::new(); max_len + 1];
    let zero_idx = intern(base[0].clone(), &mut fields);
    if max_len >= 2 {
        by_length[2].push((MultiIndex::raw(vec![0]), zero_idx));
    }
    for (i, f) in base.iter().enumerate().skip(1) {
        let idx = intern(f.clone(), &mut fields);
        by_length[1].push((MultiIndex::raw(vec![i]), idx));
    }

    let mut count = d;
    for len in 2..=max_len {
        let mut fresh: Vec<(MultiIndex, usize)> = Vec::new();
        for (parent_len, letters) in [(len - 1, 1..=d), (len.saturating_sub(2), 0..=0)] {
            if parent_len == 0 {
                continue;
            }
            let parents = by_length[parent_len].clone();
            for (alpha, pidx) in &parents {
                for i in letters.clone() {
                    let child = alpha.extend(i);
                    let bracket = lie_bracket(&fields[*pidx], &base[i])?;
                    if bracket.is_zero() {
                        continue;
                    }
                    let idx = intern(bracket, &mut fields);
                    fresh.push((child, idx));
                    count += 1;
                    if count > cap {
                        return Err(FieldError::HierarchyTooLarge { cap });
                    }
                }
            }
        }
        fresh.sort_by(|a, b| a.0.cmp(&b.0));
        by_length[len].extend(fresh);
    }

    let mut entries: Vec<(MultiIndex, usize)> = by_length
        .into_iter()
        .flatten()
        .filter(|(a, _)| a.entries != [0])
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let lookup = entries
        .iter()
        .enumerate()
        .map(|(k, (a, _))| (a.clone(), k))
        .collect();
    Ok(BracketTable {
        base: base.to_vec(),
        level: m,
        zero: VectorField::zero(n),
        entries,
        fields,
        lookup,
    })
}

impl BracketTable {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.base[0].dim()
    }

    pub fn noise_count(&self) -> usize {
        self.base.len() - 1
    }

    pub fn drift(&self) -> &VectorField {
        &self.base[0]
    }

    pub fn base(&self) -> &[VectorField] {
        &self.base
    }

    /// All stored `(alpha, V_[alpha])` in canonical order.
    pub fn entries(&self) -> impl Iterator<Item = (&MultiIndex, &VectorField)> {
        self.entries.iter().map(|(a, i)| (a, &self.fields[*i]))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of distinct fields stored.
    pub fn distinct_fields(&self) -> usize {
        self.fields.len()
    }

    /// `V_[alpha]` for any index with letters in `0..=d` and
    /// `||alpha|| <= m+2`; `None` outside that range.
    pub fn get(&self, alpha: &MultiIndex) -> Option<&VectorField> {
        if let Some(&k) = self.lookup.get(alpha) {
            return Some(&self.fields[self.entries[k].1]);
        }
        let in_range = alpha.length() <= self.level + 2 && alpha.entries.iter().all(|&i| i < self.base.len());
        in_range.then_some(&self.zero)
    }

    /// `A_m`: multi-indices of length at most `m`, canonical order.
    pub fn indices_up_to(&self, m: usize) -> Vec<MultiIndex> {
        self.entries
            .iter()
            .filter(|(a, _)| a.length() <= m)
            .map(|(a, _)| a.clone())
            .collect()
    }

    /// Distinct fields among `{V_[alpha] : length in (lo, hi]}`, each tagged
    /// with the first multi-index that produced it.
    pub fn distinct_in_range(&self, lo: usize, hi: usize) -> Vec<(MultiIndex, &VectorField)> {
        let mut seen = vec![false; self.fields.len()];
        let mut out = Vec::new();
        for (a, i) in &self.entries {
            if a.length() > lo && a.length() <= hi && !seen[*i] {
                seen[*i] = true;
                out.push((a.clone(), &self.fields[*i]));
            }
        }
        out
    }

    /// Frame columns for `subset`: distinct fields of `R_m` in canonical
    /// order, then `V0` last when requested.
    pub fn frame_fields(&self, subset: Subset) -> Vec<(String, &VectorField)> {
        let mut cols: Vec<(String, &VectorField)> = self
            .distinct_in_range(0, self.level)
            .into_iter()
            .map(|(a, f)| (a.to_string(), f))
            .collect();
        if subset == Subset::RmWithDrift {
            cols.push(("(0)".to_string(), &self.base[0]));
        }
        cols
    }

    /// Evaluates the frame at `x` as an `N x k` matrix.
    pub fn evaluate_frame(&self, subset: Subset, x: &[f64]) -> Result<DMatrix<f64>, FieldError> {
        let cols = self.frame_fields(subset);
        evaluate_columns(&cols, x)
    }
}

/// Evaluates labelled fields as matrix columns, reporting the label of the
/// first field whose value is not finite.
pub(crate) fn evaluate_columns(
    cols: &[(String, &VectorField)],
    x: &[f64],
) -> Result<DMatrix<f64>, FieldError> {
    let n = x.len();
    let mut m = DMatrix::zeros(n, cols.len());
    let mut buf = vec![0.0; n];
    for (k, (label, f)) in cols.iter().enumerate() {
        if f.dim() != n {
            return Err(FieldError::DimensionMismatch(f.dim(), n));
        }
        f.eval_into(x, &mut buf);
        if buf.iter().any(|v| !v.is_finite()) {
            let source = match f.eval_checked(x) {
                Err(e) => e,
                Ok(_) => ExprError::Domain {
                    subtree: label.clone(),
                    reason: "non-finite value".into(),
                },
            };
            return Err(FieldError::Evaluation {
                alpha: label.clone(),
                source,
            });
        }
        m.column_mut(k).copy_from_slice(&buf);
    }
    Ok(m)
}
