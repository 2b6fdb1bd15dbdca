//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

/// Absolute floor below which the largest singular value counts as zero.
pub const RANK_FLOOR: f64 = 1e-12;

/// Singular values in descending order; empty for matrices with no columns.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Count of singular values above `rtol * sigma_1`; zero when `sigma_1`
/// is below [`RANK_FLOOR`].
pub fn numerical_rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&s1) if s1 >= RANK_FLOOR => s.iter().filter(|&&v| v > rtol * s1).count(),
        _ => 0,
    }
}

/// Minimum-norm least squares `argmin |A c - b|` through the SVD
/// pseudo-inverse, discarding singular values at or below `rtol * sigma_1`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rtol: f64) -> DVector<f64> {
    let k = a.ncols();
    if k == 0 || a.nrows() == 0 {
        return DVector::zeros(k);
    }
    let svd = a.clone().svd(true, true);
    let s1 = svd.singular_values.max();
    if !(s1 > 0.0) {
        return DVector::zeros(k);
    }
    let (u, vt) = match (&svd.u, &svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return DVector::zeros(k),
    };
    let mut c = DVector::zeros(k);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > rtol * s1 {
            let coef = u.column(i).dot(b) / s;
            c += vt.row(i).transpose() * coef;
        }
    }
    c
}

/// Least squares after scaling every nonzero column to unit length; zero
/// columns get coefficient zero. Returns `(coefficients, residual vector)`.
pub fn lstsq_equilibrated(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    rtol: f64,
) -> (DVector<f64>, DVector<f64>) {
    let k = a.ncols();
    let norms: Vec<f64> = (0..k).map(|j| a.column(j).norm()).collect();
    let keep: Vec<usize> = (0..k).filter(|&j| norms[j] > 0.0).collect();
    let mut scaled = DMatrix::zeros(a.nrows(), keep.len());
    for (c, &j) in keep.iter().enumerate() {
        scaled.set_column(c, &(a.column(j) / norms[j]));
    }
    let cs = lstsq(&scaled, b, rtol);
    let mut coef = DVector::zeros(k);
    for (c, &j) in keep.iter().enumerate() {
        coef[j] = cs[c] / norms[j];
    }
    let residual = b - &scaled * &cs;
    (coef, residual)
}

/// Largest eigenvalue of `sym(u v^T) = (u v^T + v u^T)/2`. In dimension one
/// this is `u v`; otherwise the spectrum is `(u.v +- |u||v|)/2` plus zeros,
/// so the top eigenvalue is `(u.v + |u||v|)/2 >= 0`.
pub fn max_eig_sym_outer(u: &[f64], v: &[f64]) -> f64 {
    if u.len() == 1 {
        return u[0] * v[0];
    }
    0.5 * (dot(u, v) + norm(u) * norm(v))
}

/// Orthogonal projection of `v` onto the span of the left singular vectors
/// of `a` with singular values above `rtol * sigma_1`; zero when `sigma_1`
/// is below [`RANK_FLOOR`].
pub fn project_onto_columns(a: &DMatrix<f64>, v: &DVector<f64>, rtol: f64) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    if a.ncols() == 0 || a.nrows() == 0 {
        return out;
    }
    let svd = a.clone().svd(true, false);
    let s1 = svd.singular_values.max();
    if s1 < RANK_FLOOR {
        return out;
    }
    let u = svd.u.as_ref().expect("requested U");
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > rtol * s1 {
            let col = u.column(i);
            out += col * col.dot(v);
        }
    }
    out
}

/// Point `k` of `n >= 2` equally spaced points on `[lo, hi]`; both ends
/// are hit exactly and interior points never leave the interval.
pub fn grid_point(lo: f64, hi: f64, k: usize, n: usize) -> f64 {
    if k + 1 >= n {
        return hi;
    }
    (lo + (hi - lo) * (k as f64 / (n - 1) as f64)).clamp(lo, hi)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest `lambda` with `max_eig(sym((a + lambda b) b^T)) <= threshold`,
/// for `threshold >= 0`. Returns `+inf` when `b = 0` and `-inf` when no
/// `lambda` qualifies.
///
/// Writing `a = mu b + p` with `p` orthogonal to `b` and `y = (mu + lambda)|b|`,
/// the top eigenvalue is `|b| (y + sqrt(y^2 + |p|^2)) / 2`, increasing in
/// `y`, so the bound is attained at `y = (K^2 - |p|^2) / (2K)` with
/// `K = 2 threshold / |b|`.
pub fn certified_lambda(a: &[f64], b: &[f64], threshold: f64) -> f64 {
    let bb = dot(b, b);
    if bb == 0.0 {
        return f64::INFINITY;
    }
    let nb = bb.sqrt();
    let mu = dot(a, b) / bb;
    let p2: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let r = x - mu * y;
            r * r
        })
        .sum();
    let k = 2.0 * threshold / nb;
    if k <= 0.0 {
        return if p2 == 0.0 { -mu } else { f64::NEG_INFINITY };
    }
    let y = (k * k - p2) / (2.0 * k);
    y / nb - mu
}
