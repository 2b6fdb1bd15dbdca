//! Structural simplification: constant folding, 0/1 absorption, double
//! negation removal and cancellation of structurally identical operands.
//!
//! Operands of `+` and `*` are put in a canonical structural order; IEEE
//! addition and multiplication are commutative, and no rule reassociates, so
//! the simplified tree evaluates to the same value wherever both are finite.

use std::cmp::Ordering;
use std::sync::Arc;

use super::{integer_exponent, BinaryOp, Expr, UnaryOp};

/// Returns the simplify-normal form of `e`. Idempotent.
pub fn simplify(e: &Expr) -> Expr {
    match e {
        Expr::Const(_) | Expr::Var(_) => e.clone(),
        Expr::Unary(op, a) => unary(*op, simplify(a)),
        Expr::Binary(op, a, b) => binary(*op, simplify(a), simplify(b)),
    }
}

fn fold_unary(op: UnaryOp, c: f64) -> Option<f64> {
    let in_domain = match op {
        UnaryOp::Log => c > 0.0,
        UnaryOp::Sqrt => c >= 0.0,
        _ => true,
    };
    let v = op.apply(c);
    (in_domain && v.is_finite()).then_some(v)
}

fn fold_binary(op: BinaryOp, a: f64, b: f64) -> Option<f64> {
    let in_domain = match op {
        BinaryOp::Div => b != 0.0,
        BinaryOp::Pow => match integer_exponent(b) {
            Some(n) => a != 0.0 || n >= 0,
            None => a > 0.0 || (a == 0.0 && b > 0.0),
        },
        _ => true,
    };
    let v = op.apply(a, b);
    (in_domain && v.is_finite()).then_some(v)
}

/// Builds `op(a)` from normal-form `a`, returning normal form.
pub(crate) fn unary(op: UnaryOp, a: Expr) -> Expr {
    if let Expr::Const(c) = a {
        if let Some(v) = fold_unary(op, c) {
            return Expr::Const(v);
        }
    }
    if op == UnaryOp::Neg {
        if let Expr::Unary(UnaryOp::Neg, inner) = &a {
            return (**inner).clone();
        }
    }
    Expr::Unary(op, Arc::new(a))
}

fn rank(e: &Expr) -> u8 {
    match e {
        Expr::Const(_) => 0,
        Expr::Var(_) => 1,
        Expr::Unary(..) => 2,
        Expr::Binary(..) => 3,
    }
}

/// Total structural order: constants, variables, unary, binary nodes.
pub(crate) fn structural_cmp(a: &Expr, b: &Expr) -> Ordering {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => x.total_cmp(y),
        (Expr::Var(i), Expr::Var(j)) => i.cmp(j),
        (Expr::Unary(o1, c1), Expr::Unary(o2, c2)) => {
            (*o1 as u8).cmp(&(*o2 as u8)).then_with(|| structural_cmp(c1, c2))
        }
        (Expr::Binary(o1, l1, r1), Expr::Binary(o2, l2, r2)) => (*o1 as u8)
            .cmp(&(*o2 as u8))
            .then_with(|| structural_cmp(l1, l2))
            .then_with(|| structural_cmp(r1, r2)),
        _ => rank(a).cmp(&rank(b)),
    }
}

/// Builds `a op b` from normal-form operands, returning normal form.
pub(crate) fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
    let (a, b) = match op {
        BinaryOp::Add | BinaryOp::Mul if structural_cmp(&a, &b) == Ordering::Greater => (b, a),
        _ => (a, b),
    };
    if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
        if let Some(v) = fold_binary(op, *x, *y) {
            return Expr::Const(v);
        }
    }
    let ca = a.as_const();
    let cb = b.as_const();
    match op {
        BinaryOp::Add => {
            if a.is_zero() {
                return b;
            }
            if b.is_zero() {
                return a;
            }
        }
        BinaryOp::Sub => {
            if b.is_zero() {
                return a;
            }
            if a.is_zero() {
                return unary(UnaryOp::Neg, b);
            }
            if a == b {
                return Expr::Const(0.0);
            }
        }
        BinaryOp::Mul => {
            if a.is_zero() || b.is_zero() {
                return Expr::Const(0.0);
            }
            if a.is_one() {
                return b;
            }
            if b.is_one() {
                return a;
            }
            if ca == Some(-1.0) {
                return unary(UnaryOp::Neg, b);
            }
            if cb == Some(-1.0) {
                return unary(UnaryOp::Neg, a);
            }
        }
        BinaryOp::Div => {
            if b.is_one() {
                return a;
            }
            if cb == Some(-1.0) {
                return unary(UnaryOp::Neg, a);
            }
            if a.is_zero() && !b.is_zero() {
                return Expr::Const(0.0);
            }
        }
        BinaryOp::Pow => {
            if cb == Some(0.0) {
                return Expr::Const(1.0);
            }
            if cb == Some(1.0) {
                return a;
            }
        }
    }
    Expr::Binary(op, Arc::new(a), Arc::new(b))
}

/// Normal-form arithmetic helpers used by differentiation and bracket code.
pub(crate) fn add(a: Expr, b: Expr) -> Expr {
    binary(BinaryOp::Add, a, b)
}
pub(crate) fn sub(a: Expr, b: Expr) -> Expr {
    binary(BinaryOp::Sub, a, b)
}
pub(crate) fn mul(a: Expr, b: Expr) -> Expr {
    binary(BinaryOp::Mul, a, b)
}
pub(crate) fn div(a: Expr, b: Expr) -> Expr {
    binary(BinaryOp::Div, a, b)
}
pub(crate) fn neg(a: Expr) -> Expr {
    unary(UnaryOp::Neg, a)
}
