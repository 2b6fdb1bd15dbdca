use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};

use serde::Serialize;
use serde_json::Value;

use ufgsde::catalog::CatalogError;
use ufgsde::diagnostics::DiagnosticsError;
use ufgsde::dynamics::DynamicsError;
use ufgsde::expr::ExprError;
use ufgsde::fields::FieldError;
use ufgsde::geometry::GeometryError;
use ufgsde::io::ParseError;
use ufgsde::malliavin::MalliavinError;

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VIOLATED: i32 = 2;
pub const EXIT_USAGE: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// A failure mapped onto the exit-code contract.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad flags, unreadable input or malformed specs.
    Usage(String),
    /// Blow-up, Newton divergence or another numeric breakdown.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Numeric(_) => "numeric",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => m,
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ExprError> for CliError {
    fn from(e: ExprError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<CatalogError> for CliError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::IdentityFailed { .. } | CatalogError::RankMismatch { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::InvalidConfig(_) | DynamicsError::Field(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::InvalidPlan(_)
            | GeometryError::InvalidArgument(_)
            | GeometryError::Shape(_)
            | GeometryError::Field(_) => CliError::Usage(e.to_string()),
            GeometryError::Dynamics(d) => d.into(),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<MalliavinError> for CliError {
    fn from(e: MalliavinError) -> Self {
        match e {
            MalliavinError::Shape(_) => CliError::Usage(e.to_string()),
            MalliavinError::Dynamics(d) => d.into(),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::TooFewSamples(_) => CliError::Numeric(e.to_string()),
            DiagnosticsError::Dynamics(d) => d.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

/// Settings echoed into every report. Worker count is deliberately absent:
/// it never changes results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub seed: u64,
    pub dt: f64,
    /// Grid actually used, or the default per-axis count when the command
    /// samples no grid.
    pub grid: Value,
    pub rtol: f64,
    pub lambda0_sweep: bool,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorInfo {
    pub kind: &'static str,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub system: Option<String>,
    pub params: BTreeMap<String, f64>,
    pub verdict: String,
    pub worst_point: Option<Vec<f64>>,
    pub records: Value,
    pub metadata: Metadata,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

impl Report {
    pub fn new(command: &str, metadata: Metadata) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            system: None,
            params: BTreeMap::new(),
            verdict: "pass".into(),
            worst_point: None,
            records: Value::Array(Vec::new()),
            metadata,
            summary: None,
            error: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report values serialize");
        s.push('\n');
        s
    }
}

/// Writes `bytes` to the file `path`, or to standard output for `-`.
pub fn write_out(path: &str, bytes: &[u8]) -> Result<(), CliError> {
    if path == "-" {
        let mut out = io::stdout().lock();
        out.write_all(bytes)
            .and_then(|_| out.flush())
            .map_err(|e| usage(format!("cannot write to standard output: {e}")))
    } else {
        fs::write(path, bytes).map_err(|e| usage(format!("cannot write `{path}`: {e}")))
    }
}
