//! Scalar expression trees used as vector-field components and test densities.
//!
//! Trees are immutable and share subtrees through `Arc`, so cloning is cheap
//! and values can be evaluated concurrently.

mod compile;
mod diff;
mod eval;
mod parse;
mod simplify;

use std::fmt;
use std::sync::Arc;

pub use compile::Program;
pub use diff::differentiate;
pub use eval::evaluate;
pub use parse::parse_expression;
pub use simplify::simplify;

/// Unary operators. `Neg` is arithmetic negation, the rest are function calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Tanh,
}

impl UnaryOp {
    pub const FUNCTIONS: [UnaryOp; 6] = [
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Sqrt,
        UnaryOp::Tanh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<UnaryOp> {
        UnaryOp::FUNCTIONS.iter().copied().find(|f| f.name() == name)
    }

    /// Unchecked IEEE application.
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            UnaryOp::Neg => -v,
            UnaryOp::Sin => v.sin(),
            UnaryOp::Cos => v.cos(),
            UnaryOp::Exp => v.exp(),
            UnaryOp::Log => v.ln(),
            UnaryOp::Sqrt => v.sqrt(),
            UnaryOp::Tanh => v.tanh(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    pub fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }

    /// Unchecked IEEE application. Integer exponents use `powi`.
    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            BinaryOp::Pow => match integer_exponent(b) {
                Some(n) => a.powi(n),
                None => a.powf(b),
            },
        }
    }
}

/// Returns `Some(n)` when `b` is an integer representable as `i32`.
#[inline]
pub(crate) fn integer_exponent(b: f64) -> Option<i32> {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        Some(b as i32)
    } else {
        None
    }
}

/// Expression node. Variables are 0-based coordinate indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Arc<Expr>),
    Binary(BinaryOp, Arc<Expr>, Arc<Expr>),
}

/// Errors raised while parsing or evaluating expressions.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at offset {position}: expected one of [{}], found {found}", expected.join(", "))]
    Syntax {
        position: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("unknown identifier `{name}` at offset {position}")]
    UnknownIdentifier { position: usize, name: String },
    #[error("arity mismatch for `{name}` at offset {position}: {detail}")]
    Arity {
        position: usize,
        name: String,
        detail: String,
    },
    #[error("invalid variable list: {0}")]
    VariableList(String),
    #[error("domain error in `{subtree}`: {reason}")]
    Domain { subtree: String, reason: String },
    #[error("point has {got} coordinates but expression uses index {index}")]
    PointLength { got: usize, index: usize },
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn zero() -> Expr {
        Expr::Const(0.0)
    }

    pub fn one() -> Expr {
        Expr::Const(1.0)
    }

    /// Raw (unsimplified) unary node.
    pub fn unary(op: UnaryOp, e: Expr) -> Expr {
        Expr::Unary(op, Arc::new(e))
    }

    /// Raw (unsimplified) binary node.
    pub fn binary(op: BinaryOp, l: Expr, r: Expr) -> Expr {
        Expr::Binary(op, Arc::new(l), Arc::new(r))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// True for the literal constant zero (either sign).
    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 1.0)
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Unary(_, a) => a.max_var(),
            Expr::Binary(_, a, b) => match (a.max_var(), b.max_var()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }

    /// True if variable `i` occurs in the tree.
    pub fn depends_on(&self, i: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(j) => *j == i,
            Expr::Unary(_, a) => a.depends_on(i),
            Expr::Binary(_, a, b) => a.depends_on(i) || b.depends_on(i),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) => 1 + a.node_count(),
            Expr::Binary(_, a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    /// Canonical fully parenthesized form, using `names[i]` for variable `i`
    /// and `x{i+1}` where no name is supplied.
    pub fn to_canonical_string(&self, names: &[String]) -> String {
        let mut out = String::new();
        write_canonical(self, names, &mut out);
        out
    }

    /// Replaces every variable `i` by `subs[i]`.
    pub fn substitute(&self, subs: &[Expr]) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Var(i) => subs.get(*i).cloned().unwrap_or_else(|| self.clone()),
            Expr::Unary(op, a) => Expr::unary(*op, a.substitute(subs)),
            Expr::Binary(op, a, b) => Expr::binary(*op, a.substitute(subs), b.substitute(subs)),
        }
    }
}

fn write_const(c: f64, out: &mut String) {
    if c.is_sign_negative() {
        out.push_str("(-");
        out.push_str(&format!("{:?}", -c));
        out.push(')');
    } else {
        out.push_str(&format!("{:?}", c));
    }
}

fn write_canonical(e: &Expr, names: &[String], out: &mut String) {
    match e {
        Expr::Const(c) => write_const(*c, out),
        Expr::Var(i) => match names.get(*i) {
            Some(n) => out.push_str(n),
            None => out.push_str(&format!("x{}", i + 1)),
        },
        Expr::Unary(UnaryOp::Neg, a) => {
            out.push_str("(-");
            write_canonical(a, names, out);
            out.push(')');
        }
        Expr::Unary(op, a) => {
            out.push_str(op.name());
            out.push('(');
            write_canonical(a, names, out);
            out.push(')');
        }
        Expr::Binary(op, a, b) => {
            out.push('(');
            write_canonical(a, names, out);
            out.push(op.symbol());
            write_canonical(b, names, out);
            out.push(')');
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical_string(&[]))
    }
}
