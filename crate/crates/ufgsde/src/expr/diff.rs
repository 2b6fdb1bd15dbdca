use super::simplify::{add, binary, div, mul, neg, sub, unary};
use super::{BinaryOp, Expr, UnaryOp};

/// Exact symbolic partial derivative with respect to variable `var`, in
/// simplify-normal form.
pub fn differentiate(e: &Expr, var: usize) -> Expr {
    let simplified = super::simplify(e);
    d(&simplified, var)
}

// `e` is in normal form, so the product/quotient rules can reuse its subtrees.
fn d(e: &Expr, var: usize) -> Expr {
    if !e.depends_on(var) {
        return Expr::Const(0.0);
    }
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
        Expr::Unary(op, a) => {
            let a = (**a).clone();
            let da = d(&a, var);
            let outer = match op {
                UnaryOp::Neg => return neg(da),
                UnaryOp::Sin => unary(UnaryOp::Cos, a),
                UnaryOp::Cos => neg(unary(UnaryOp::Sin, a)),
                UnaryOp::Exp => unary(UnaryOp::Exp, a),
                UnaryOp::Log => return div(da, a),
                UnaryOp::Sqrt => {
                    return div(da, mul(Expr::Const(2.0), unary(UnaryOp::Sqrt, a)));
                }
                UnaryOp::Tanh => {
                    let t = unary(UnaryOp::Tanh, a);
                    sub(Expr::Const(1.0), mul(t.clone(), t))
                }
            };
            mul(outer, da)
        }
        Expr::Binary(op, a, b) => {
            let (a, b) = ((**a).clone(), (**b).clone());
            match op {
                BinaryOp::Add => add(d(&a, var), d(&b, var)),
                BinaryOp::Sub => sub(d(&a, var), d(&b, var)),
                BinaryOp::Mul => add(mul(d(&a, var), b.clone()), mul(a, d(&b, var))),
                BinaryOp::Div => {
                    let num = sub(mul(d(&a, var), b.clone()), mul(a, d(&b, var)));
                    div(num, mul(b.clone(), b))
                }
                BinaryOp::Pow => {
                    let c = b.as_const().expect("exponent is a constant node");
                    let lowered = binary(BinaryOp::Pow, a.clone(), Expr::Const(c - 1.0));
                    mul(mul(Expr::Const(c), lowered), d(&a, var))
                }
            }
        }
    }
}
