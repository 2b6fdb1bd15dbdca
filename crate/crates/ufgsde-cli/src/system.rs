use std::collections::BTreeMap;
use std::fs;

use ufgsde::catalog::{self, CatalogEntry};
use ufgsde::dynamics::SDESystem;
use ufgsde::expr::parse_expression;
use ufgsde::fields::{BracketTable, Field, VectorField};
use ufgsde::geometry::ProjectedDrift;
use ufgsde::io::{parse_param, parse_point, parse_system_file};

use crate::report::{usage, CliError};
use crate::SystemArgs;

/// A system from the catalog or from a file.
pub(crate) struct Loaded {
    pub label: String,
    pub system: SDESystem,
    pub entry: Option<CatalogEntry>,
}

pub(crate) fn parse_params(items: &[String]) -> Result<BTreeMap<String, f64>, CliError> {
    let mut out = BTreeMap::new();
    for item in items {
        let (k, v) = parse_param(item)?;
        if out.insert(k.clone(), v).is_some() {
            return Err(usage(format!("parameter `{k}` given twice")));
        }
    }
    Ok(out)
}

/// Catalog names take precedence over file paths.
pub(crate) fn load(args: &SystemArgs) -> Result<Loaded, CliError> {
    let params = parse_params(&args.params)?;
    if catalog::names().contains(&args.system.as_str()) {
        let entry = catalog::get(&args.system, &params)?;
        return Ok(Loaded {
            label: args.system.clone(),
            system: entry.system.clone(),
            entry: Some(entry),
        });
    }
    let text = fs::read_to_string(&args.system).map_err(|e| {
        usage(format!(
            "`{}` is neither a catalog entry ({}) nor a readable file: {e}",
            args.system,
            catalog::names().join(", ")
        ))
    })?;
    if !params.is_empty() {
        return Err(usage("--param applies to catalog entries; set file parameters with `params =`"));
    }
    let system = parse_system_file(&text).map_err(|e| usage(format!("{}: {e}", args.system)))?;
    Ok(Loaded {
        label: args.system.clone(),
        system,
        entry: None,
    })
}

impl Loaded {
    pub fn params(&self) -> BTreeMap<String, f64> {
        self.system.params.clone()
    }

    pub fn level(&self, given: Option<usize>) -> Result<usize, CliError> {
        let m = given.or(self.entry.as_ref().map(|e| e.level)).unwrap_or(1);
        if m == 0 {
            return Err(usage("--level must be at least 1"));
        }
        Ok(m)
    }

    pub fn table(&self, level: usize) -> Result<BracketTable, CliError> {
        Ok(self.system.hierarchy(level)?)
    }

    pub fn x0(&self, given: Option<&str>) -> Result<Vec<f64>, CliError> {
        let x = match (given, &self.entry) {
            (Some(s), _) => parse_point(s)?,
            (None, Some(e)) => e.x0.clone(),
            (None, None) => return Err(usage("--x0 is required for systems read from a file")),
        };
        if x.len() != self.system.dim() {
            return Err(usage(format!(
                "start point has {} coordinates but the system has dimension {}",
                x.len(),
                self.system.dim()
            )));
        }
        Ok(x)
    }

    pub fn domain(&self, given: Option<&str>) -> Result<Vec<(f64, f64)>, CliError> {
        match (given, &self.entry) {
            (Some(s), _) => Ok(ufgsde::io::parse_box(s)?),
            (None, Some(e)) => Ok(e.domain.clone()),
            (None, None) => Err(usage("--box is required for systems read from a file")),
        }
    }

    /// `V0perp`: the closed form from the catalog when present, otherwise
    /// the numerical projection at `level`.
    pub fn v0_perp(&self, level: usize, rtol: f64) -> Result<Box<dyn Field>, CliError> {
        if let Some(v) = self.entry.as_ref().and_then(|e| e.v0_perp.clone()) {
            return Ok(Box::new(v));
        }
        Ok(Box::new(ProjectedDrift::new(self.table(level)?, rtol)))
    }

    /// `V0`, `V1`, .., `V0perp` or a bracketed list of expressions in the
    /// system variables (a bare expression in one dimension).
    pub fn direction(&self, spec: &str, level: usize, rtol: f64) -> Result<Box<dyn Field>, CliError> {
        let spec = spec.trim();
        if spec == "V0perp" {
            return self.v0_perp(level, rtol);
        }
        if let Some(i) = spec.strip_prefix('V').and_then(|s| s.parse::<usize>().ok()) {
            let fields = self.system.fields();
            return fields
                .get(i)
                .cloned()
                .map(|f| Box::new(f) as Box<dyn Field>)
                .ok_or_else(|| usage(format!("the system has no field V{i}")));
        }
        let inner = spec.strip_prefix('[').and_then(|s| s.strip_suffix(']')).unwrap_or(spec);
        let parts = split_commas(inner);
        if parts.len() != self.system.dim() {
            return Err(usage(format!(
                "direction has {} components but the system has dimension {}",
                parts.len(),
                self.system.dim()
            )));
        }
        let comps = parts
            .iter()
            .map(|p| parse_expression(p, &self.system.variables))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Box::new(VectorField::new(comps)?))
    }
}

/// Splits on commas outside parentheses.
pub(crate) fn split_commas(text: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&text[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&text[start..]);
    parts
}

/// Points file: one comma-separated point per line, `#` comments.
pub(crate) fn read_points(path: &str) -> Result<Vec<Vec<f64>>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read `{path}`: {e}")))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        points.push(parse_point(content).map_err(|e| usage(format!("{path}:{}: {e}", i + 1)))?);
    }
    if points.is_empty() {
        return Err(usage(format!("`{path}` contains no points")));
    }
    Ok(points)
}
