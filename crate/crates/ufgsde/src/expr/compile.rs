use super::{integer_exponent, BinaryOp, Expr, UnaryOp};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Unary(UnaryOp),
    Binary(BinaryOp),
    PowI(i32),
}

const INLINE_STACK: usize = 32;

/// Postfix program for unchecked, allocation-free evaluation in hot loops.
///
/// Produces the same IEEE value as [`super::evaluate`] wherever the latter
/// succeeds; outside the domain it yields NaN or infinity instead of an error.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
    depth: usize,
}

impl Program {
    pub fn compile(e: &Expr) -> Program {
        let mut ops = Vec::new();
        let depth = emit(e, &mut ops);
        Program { ops, depth }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.depth <= INLINE_STACK {
            let mut stack = [0.0f64; INLINE_STACK];
            run(&self.ops, x, &mut stack)
        } else {
            let mut stack = vec![0.0; self.depth];
            run(&self.ops, x, &mut stack)
        }
    }
}

#[inline]
fn run(ops: &[Op], x: &[f64], stack: &mut [f64]) -> f64 {
    let mut sp = 0usize;
    for op in ops {
        match *op {
            Op::Const(c) => {
                stack[sp] = c;
                sp += 1;
            }
            Op::Var(i) => {
                stack[sp] = x[i];
                sp += 1;
            }
            Op::Unary(u) => stack[sp - 1] = u.apply(stack[sp - 1]),
            Op::PowI(n) => stack[sp - 1] = stack[sp - 1].powi(n),
            Op::Binary(b) => {
                sp -= 1;
                stack[sp - 1] = b.apply(stack[sp - 1], stack[sp]);
            }
        }
    }
    stack[0]
}

// Returns the stack depth needed for `e`.
fn emit(e: &Expr, ops: &mut Vec<Op>) -> usize {
    match e {
        Expr::Const(c) => {
            ops.push(Op::Const(*c));
            1
        }
        Expr::Var(i) => {
            ops.push(Op::Var(*i));
            1
        }
        Expr::Unary(u, a) => {
            let da = emit(a, ops);
            ops.push(Op::Unary(*u));
            da
        }
        Expr::Binary(BinaryOp::Pow, a, b) if b.as_const().and_then(integer_exponent).is_some() => {
            let da = emit(a, ops);
            let n = b.as_const().and_then(integer_exponent).unwrap_or(1);
            ops.push(Op::PowI(n));
            da
        }
        Expr::Binary(op, a, b) => {
            let da = emit(a, ops);
            let db = emit(b, ops);
            ops.push(Op::Binary(*op));
            da.max(db + 1)
        }
    }
}
