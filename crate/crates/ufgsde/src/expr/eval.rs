use super::{integer_exponent, BinaryOp, Expr, ExprError, UnaryOp};

fn domain(e: &Expr, reason: impl Into<String>) -> ExprError {
    ExprError::Domain {
        subtree: e.to_string(),
        reason: reason.into(),
    }
}

/// Checked evaluation. Domain violations and non-finite intermediate values
/// are errors naming the innermost offending subtree.
pub fn evaluate(e: &Expr, point: &[f64]) -> Result<f64, ExprError> {
    let v = match e {
        Expr::Const(c) => *c,
        Expr::Var(i) => *point.get(*i).ok_or(ExprError::PointLength {
            got: point.len(),
            index: *i,
        })?,
        Expr::Unary(op, a) => {
            let x = evaluate(a, point)?;
            match op {
                UnaryOp::Log if x <= 0.0 => {
                    return Err(domain(e, format!("log of non-positive value {x}")))
                }
                UnaryOp::Sqrt if x < 0.0 => {
                    return Err(domain(e, format!("sqrt of negative value {x}")))
                }
                _ => op.apply(x),
            }
        }
        Expr::Binary(op, a, b) => {
            let x = evaluate(a, point)?;
            let y = evaluate(b, point)?;
            match op {
                BinaryOp::Div if y == 0.0 => return Err(domain(e, "division by zero")),
                BinaryOp::Pow => match integer_exponent(y) {
                    Some(n) if n < 0 && x == 0.0 => {
                        return Err(domain(e, "zero raised to a negative power"))
                    }
                    None if x < 0.0 => {
                        return Err(domain(
                            e,
                            format!("non-integer power of negative base {x}"),
                        ))
                    }
                    None if x == 0.0 && y < 0.0 => {
                        return Err(domain(e, "zero raised to a negative power"))
                    }
                    _ => op.apply(x, y),
                },
                _ => op.apply(x, y),
            }
        }
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(domain(e, format!("non-finite value {v}")))
    }
}
