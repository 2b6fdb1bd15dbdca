//! Text formats: system files and the compact specs used on the command line.
//!
//! System file:
//!
//! ```text
//! # comment
//! name = random-circles
//! dim = 2
//! noise = 1
//! vars = x, y
//! params = k = 1.5, c = 2
//! V0 = [-y, k*x]
//! V1 = [x, y]
//! ```
//!
//! `name` and `params` are optional; parameters are substituted as
//! constants. Keys may appear in any order but each at most once.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::diagnostics::Reference;
use crate::dynamics::SDESystem;
use crate::expr::{evaluate, parse_expression, Expr, ExprError, UnaryOp};
use crate::fields::VectorField;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("line {line}, column {column}: field V{field}: {source}")]
    Expression {
        line: usize,
        column: usize,
        field: usize,
        source: ExprError,
    },
    #[error("line {line}: field V{field} has {got} components but dim = {dim}")]
    Length { line: usize, field: usize, got: usize, dim: usize },
    #[error("missing {0}")]
    Missing(String),
    #[error("invalid spec `{spec}`: {message}")]
    Spec { spec: String, message: String },
}

fn line_err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Line { line, message: message.into() }
}

/// Splits on commas outside parentheses, with the byte offset of each part.
fn split_top(text: &str) -> Vec<(usize, &str)> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push((start, &text[start..i]));
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push((start, &text[start..]));
    parts
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize, ParseError> {
    v.trim()
        .parse()
        .map_err(|_| line_err(line, format!("`{key}` must be a non-negative integer, got `{}`", v.trim())))
}

/// Names must be identifiers that the expression grammar reads as variables.
fn check_identifier(line: usize, name: &str) -> Result<(), ParseError> {
    let mut chars = name.chars();
    let head_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
    if !head_ok || !chars.all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(line_err(line, format!("`{name}` is not an identifier")));
    }
    if UnaryOp::from_name(name).is_some() {
        return Err(line_err(line, format!("`{name}` is a function name")));
    }
    Ok(())
}

struct Raw<'a> {
    line: usize,
    /// Byte column of the value within the line.
    column: usize,
    value: &'a str,
}

/// Parses the system-file format into an `SDESystem`.
pub fn parse_system_file(text: &str) -> Result<SDESystem, ParseError> {
    let mut keys: BTreeMap<String, Raw> = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let eq = content
            .find('=')
            .ok_or_else(|| line_err(line, format!("expected `key = value`, got `{}`", content.trim())))?;
        let key = content[..eq].trim();
        if key.is_empty() {
            return Err(line_err(line, "missing key before `=`"));
        }
        let value = &content[eq + 1..];
        let column = eq + 1 + (value.len() - value.trim_start().len()) + 1;
        if keys.insert(key.to_string(), Raw { line, column, value: value.trim() }).is_some() {
            return Err(line_err(line, format!("duplicate key `{key}`")));
        }
    }
    let take = |k: &str| keys.get(k).ok_or_else(|| ParseError::Missing(format!("`{k}`")));
    let dim_raw = take("dim")?;
    let dim = parse_usize(dim_raw.line, "dim", dim_raw.value)?;
    let noise_raw = take("noise")?;
    let noise = parse_usize(noise_raw.line, "noise", noise_raw.value)?;
    if dim == 0 || noise == 0 {
        return Err(line_err(dim_raw.line.max(noise_raw.line), "dim and noise must be positive"));
    }
    let vars_raw = take("vars")?;
    let vars: Vec<String> = vars_raw.value.split(',').map(|s| s.trim().to_string()).collect();
    if vars.len() != dim {
        return Err(line_err(vars_raw.line, format!("{} variables declared but dim = {dim}", vars.len())));
    }
    for (i, v) in vars.iter().enumerate() {
        check_identifier(vars_raw.line, v)?;
        if vars[..i].contains(v) {
            return Err(line_err(vars_raw.line, format!("variable `{v}` declared twice")));
        }
    }

    let mut params = BTreeMap::new();
    if let Some(p) = keys.get("params") {
        for (_, item) in split_top(p.value) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| line_err(p.line, format!("parameter `{}` needs `name = value`", item.trim())))?;
            let k = k.trim().to_string();
            check_identifier(p.line, &k)?;
            let v: f64 = parse_number(v.trim()).map_err(|e| line_err(p.line, e.to_string()))?;
            if vars.contains(&k) || params.insert(k.clone(), v).is_some() {
                return Err(line_err(p.line, format!("parameter `{k}` declared twice")));
            }
        }
    }
    let mut names: Vec<String> = vars.clone();
    names.extend(params.keys().cloned());
    let subs: Vec<Expr> = (0..dim)
        .map(Expr::var)
        .chain(params.values().map(|v| Expr::constant(*v)))
        .collect();

    for k in keys.keys() {
        let known = matches!(k.as_str(), "name" | "dim" | "noise" | "vars" | "params")
            || k.strip_prefix('V').and_then(|i| i.parse::<usize>().ok()).is_some_and(|i| i <= noise);
        if !known {
            return Err(line_err(keys[k].line, format!("unknown key `{k}`")));
        }
    }

    let mut fields = Vec::with_capacity(noise + 1);
    for f in 0..=noise {
        let raw = take(&format!("V{f}"))?;
        let inner = raw
            .value
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| line_err(raw.line, format!("field V{f} must be a bracketed list `[e1, ..., eN]`")))?;
        let parts = split_top(inner);
        if parts.len() != dim {
            return Err(ParseError::Length { line: raw.line, field: f, got: parts.len(), dim });
        }
        let mut comps = Vec::with_capacity(dim);
        for (offset, part) in parts {
            let e = parse_expression(part, &names).map_err(|source| ParseError::Expression {
                line: raw.line,
                column: raw.column + 1 + offset,
                field: f,
                source,
            })?;
            comps.push(e.substitute(&subs));
        }
        fields.push(VectorField::new(comps).map_err(|e| line_err(raw.line, e.to_string()))?);
    }
    let name = keys.get("name").map_or("custom", |r| r.value).to_string();
    let drift = fields.remove(0);
    let mut sys = SDESystem::new(name, vars, drift, fields).map_err(|e| line_err(dim_raw.line, e.to_string()))?;
    sys.params = params;
    Ok(sys)
}

/// Renders `system` in the system-file format. Parameters are already
/// substituted, so they are written as a comment.
pub fn format_system_file(system: &SDESystem) -> String {
    let mut out = String::new();
    out.push_str(&format!("name = {}\n", system.name));
    if !system.params.is_empty() {
        let p: Vec<String> = system.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        out.push_str(&format!("# params: {}\n", p.join(", ")));
    }
    out.push_str(&format!("dim = {}\n", system.dim()));
    out.push_str(&format!("noise = {}\n", system.noise_count()));
    out.push_str(&format!("vars = {}\n", system.variables.join(", ")));
    for (i, f) in system.fields().iter().enumerate() {
        out.push_str(&format!("V{i} = [{}]\n", f.to_strings(&system.variables).join(", ")));
    }
    out
}

fn spec_err(spec: &str, message: impl Into<String>) -> ParseError {
    ParseError::Spec { spec: spec.into(), message: message.into() }
}

/// A constant expression; `pi` is available.
pub fn parse_number(text: &str) -> Result<f64, ParseError> {
    let e = parse_expression(text, &["pi"]).map_err(|e| spec_err(text, e.to_string()))?;
    let v = evaluate(&e, &[PI]).map_err(|e| spec_err(text, e.to_string()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(spec_err(text, "value is not finite"))
    }
}

/// Comma-separated reals, e.g. `1,0` or `0, 2*pi`.
pub fn parse_point(text: &str) -> Result<Vec<f64>, ParseError> {
    if text.trim().is_empty() {
        return Err(spec_err(text, "empty point"));
    }
    split_top(text).into_iter().map(|(_, p)| parse_number(p.trim())).collect()
}

/// Comma-separated `lo:hi` intervals with `lo <= hi`.
pub fn parse_box(text: &str) -> Result<Vec<(f64, f64)>, ParseError> {
    if text.trim().is_empty() {
        return Err(spec_err(text, "empty box"));
    }
    split_top(text)
        .into_iter()
        .map(|(_, axis)| {
            let (lo, hi) = axis
                .split_once(':')
                .ok_or_else(|| spec_err(text, format!("axis `{}` is not `lo:hi`", axis.trim())))?;
            let (lo, hi) = (parse_number(lo.trim())?, parse_number(hi.trim())?);
            if lo > hi {
                return Err(spec_err(text, format!("lower bound {lo} exceeds upper bound {hi}")));
            }
            Ok((lo, hi))
        })
        .collect()
}

/// `lo:hi:n`, `n >= 2` equally spaced points including both ends.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, ParseError> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(spec_err(text, "expected `lo:hi:n`"));
    }
    let (lo, hi) = (parse_number(parts[0].trim())?, parse_number(parts[1].trim())?);
    let n: usize = parts[2].trim().parse().map_err(|_| spec_err(text, "point count must be an integer"))?;
    if n < 2 || !(lo < hi) {
        return Err(spec_err(text, "need lo < hi and at least 2 points"));
    }
    Ok((0..n).map(|i| crate::linalg::grid_point(lo, hi, i, n)).collect())
}

/// Comma-separated strictly increasing positive times.
pub fn parse_times(text: &str) -> Result<Vec<f64>, ParseError> {
    let t = parse_point(text)?;
    if t.iter().any(|v| !(*v > 0.0)) || t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(spec_err(text, "times must be positive and strictly increasing"));
    }
    Ok(t)
}

/// `name=value`.
pub fn parse_param(text: &str) -> Result<(String, f64), ParseError> {
    let (k, v) = text.split_once('=').ok_or_else(|| spec_err(text, "expected `name=value`"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(spec_err(text, "empty parameter name"));
    }
    Ok((k.to_string(), parse_number(v.trim())?))
}

/// One reference per coordinate separated by `;`: `gaussian(mean,var)`,
/// `dirac(a)` or `none`.
pub fn parse_references(text: &str) -> Result<Vec<Option<Reference>>, ParseError> {
    text.split(';')
        .map(|item| {
            let item = item.trim();
            if item == "none" {
                return Ok(None);
            }
            let open = item.find('(').ok_or_else(|| spec_err(item, "expected `kind(args)` or `none`"))?;
            let args = item[open + 1..]
                .strip_suffix(')')
                .ok_or_else(|| spec_err(item, "missing closing parenthesis"))?;
            let args: Vec<f64> = split_top(args)
                .into_iter()
                .map(|(_, a)| parse_number(a.trim()))
                .collect::<Result<_, _>>()?;
            match (&item[..open], args.as_slice()) {
                ("gaussian", [mean, variance]) => {
                    if !(*variance > 0.0) {
                        return Err(spec_err(item, "variance must be positive"));
                    }
                    Ok(Some(Reference::Gaussian { mean: *mean, variance: *variance }))
                }
                ("dirac", [a]) => Ok(Some(Reference::Dirac(*a))),
                (kind, _) => Err(spec_err(item, format!("unknown reference `{kind}` or wrong argument count"))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Field;

    const CIRCLES: &str = "dim = 2\nnoise = 1\nvars = x, y\nV0 = [-y, x]\nV1 = [x, y]\n";

    #[test]
    fn parses_the_documented_example() {
        let s = parse_system_file(CIRCLES).unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(s.noise_count(), 1);
        assert_eq!(s.drift.eval_vec(&[1.0, 2.0]), vec![-2.0, 1.0]);
    }

    #[test]
    fn round_trips_through_format() {
        let s = parse_system_file(CIRCLES).unwrap();
        let text = format_system_file(&s);
        let back = parse_system_file(&text).unwrap();
        assert_eq!(format_system_file(&back), text);
        assert_eq!(back.fields(), s.fields());
    }

    #[test]
    fn parameters_are_substituted() {
        let s = parse_system_file("dim=1\nnoise=1\nvars=z\nparams = k = 2, c = pi\nV0=[-k*(z + (c))]\nV1=[1]").unwrap();
        let want = -2.0 * (0.5 + PI);
        assert!((s.drift.eval_vec(&[0.5])[0] - want).abs() < 1e-15);
        assert_eq!(s.params["k"], 2.0);
    }

    #[test]
    fn errors_name_the_problem() {
        let e = parse_system_file("dim = 2\nnoise = 1\nvars = x, y\nV0 = [x]\nV1 = [x, y]").unwrap_err();
        assert!(matches!(e, ParseError::Length { field: 0, got: 1, dim: 2, line: 4 }), "{e}");
        let e = parse_system_file("dim = 1\nnoise = 1\nvars = x\nV0 = [foo(x)]\nV1 = [1]").unwrap_err();
        assert!(e.to_string().contains("foo"), "{e}");
        assert!(matches!(e, ParseError::Expression { line: 4, field: 0, .. }));
        let e = parse_system_file("dim = 1\nnoise = 1\nvars = x\nV0 = [x]").unwrap_err();
        assert_eq!(e, ParseError::Missing("`V1`".into()));
        assert!(parse_system_file("dim = 1\ndim = 1").is_err());
        assert!(parse_system_file("dim = 1\nnoise = 1\nvars = x\nV0 = [x]\nV1 = [1]\nV2 = [1]").is_err());
    }

    #[test]
    fn specs() {
        assert_eq!(parse_box("-3:3, 0:2*pi").unwrap(), vec![(-3.0, 3.0), (0.0, 2.0 * PI)]);
        assert!(parse_box("3:-3").is_err());
        assert_eq!(parse_point("1,0").unwrap(), vec![1.0, 0.0]);
        assert_eq!(parse_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_times("1,1").is_err());
        assert_eq!(parse_param("k=-1").unwrap(), ("k".into(), -1.0));
        let r = parse_references("gaussian(0, 2); none; dirac(2*pi)").unwrap();
        assert_eq!(r[0], Some(Reference::Gaussian { mean: 0.0, variance: 2.0 }));
        assert_eq!(r[1], None);
        assert_eq!(r[2], Some(Reference::Dirac(2.0 * PI)));
        assert!(parse_references("gaussian(0,-1)").is_err());
    }
}
