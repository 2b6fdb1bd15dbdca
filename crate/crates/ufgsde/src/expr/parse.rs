//! Recursive-descent parser for the expression grammar:
//!
//! ```text
//! expr   := term (("+"|"-") term)* ;
//! term   := factor (("*"|"/") factor)* ;
//! factor := ("-")? power ;
//! power  := atom ("^" atom)? ;
//! atom   := NUMBER | IDENT | IDENT "(" expr ")" | "(" expr ")" ;
//! ```
//!
//! `-NUMBER` (without an exponent) is read as a negative constant, and the
//! exponent of `^` must fold to a constant.

use super::{simplify, BinaryOp, Expr, ExprError, UnaryOp};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn syntax(position: usize, expected: &[&str], found: String) -> ExprError {
    ExprError::Syntax {
        position,
        expected: expected.iter().map(|s| s.to_string()).collect(),
        found,
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit
                    .parse()
                    .map_err(|_| syntax(start, &["number"], format!("`{lit}`")))?;
                if !v.is_finite() {
                    return Err(syntax(start, &["finite number"], format!("`{lit}`")));
                }
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(syntax(
                    start,
                    &["number", "identifier", "operator", "parenthesis"],
                    format!("character `{ch}`"),
                ));
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    vars: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, label: &str) -> Result<(), ExprError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(syntax(self.offset(), &[label], self.peek().describe()))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            let inner = self.power()?;
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::unary(UnaryOp::Neg, other),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let at = self.offset();
        let exponent = simplify(&self.atom()?);
        match exponent {
            Expr::Const(_) => Ok(Expr::binary(BinaryOp::Pow, base, exponent)),
            _ => Err(syntax(at, &["constant exponent"], "non-constant exponent".into())),
        }
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let (tok, at) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(op) = UnaryOp::from_name(&name) {
                    if *self.peek() != Tok::LParen {
                        return Err(ExprError::Arity {
                            position: at,
                            name,
                            detail: "function requires one parenthesized argument".into(),
                        });
                    }
                    self.bump();
                    let arg = self.expr()?;
                    if *self.peek() == Tok::Comma {
                        return Err(ExprError::Arity {
                            position: self.offset(),
                            name,
                            detail: "function takes exactly one argument".into(),
                        });
                    }
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(Expr::unary(op, arg));
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(i) => {
                        if *self.peek() == Tok::LParen {
                            return Err(ExprError::Arity {
                                position: at,
                                name,
                                detail: "variable cannot be called".into(),
                            });
                        }
                        Ok(Expr::Var(i))
                    }
                    None => Err(ExprError::UnknownIdentifier { position: at, name }),
                }
            }
            other => Err(syntax(
                at,
                &["number", "identifier", "`(`", "`-`"],
                other.describe(),
            )),
        }
    }
}

/// Parses `text` with `variable_names[i]` bound to coordinate `i`.
pub fn parse_expression<S: AsRef<str>>(
    text: &str,
    variable_names: &[S],
) -> Result<Expr, ExprError> {
    let vars: Vec<String> = variable_names.iter().map(|s| s.as_ref().to_string()).collect();
    for (i, v) in vars.iter().enumerate() {
        let valid = v
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && v.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid {
            return Err(ExprError::VariableList(format!("`{v}` is not an identifier")));
        }
        if UnaryOp::from_name(v).is_some() {
            return Err(ExprError::VariableList(format!("`{v}` is a function name")));
        }
        if vars[..i].contains(v) {
            return Err(ExprError::VariableList(format!("`{v}` declared twice")));
        }
    }
    let toks = lex(text)?;
    if toks.len() == 1 {
        return Err(syntax(0, &["expression"], "end of input".into()));
    }
    let mut p = Parser {
        toks,
        pos: 0,
        vars: &vars,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(syntax(
            p.offset(),
            &["`+`", "`-`", "`*`", "`/`", "`^`", "end of input"],
            p.peek().describe(),
        ));
    }
    Ok(e)
}
