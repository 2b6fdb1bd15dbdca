//! Command-line front end: argument parsing, system loading, report and CSV
//! emission. `run` maps every outcome onto the exit-code contract.

// `!(x <= tol)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod report;
mod system;

pub use report::{CliError, Report, EXIT_NUMERIC, EXIT_PASS, EXIT_USAGE, EXIT_VIOLATED, SCHEMA_VERSION};

/// Default per-axis grid size printed into reports.
pub const DEFAULT_GRID: usize = 32;

#[derive(Debug, Parser)]
#[command(name = "ufgsde", version, about = "Check bracket conditions on, and simulate, degenerate Stratonovich SDEs")]
pub struct Cli {
    /// Relative rank cutoff.
    #[arg(long, global = true, default_value_t = ufgsde::geometry::DEFAULT_RTOL)]
    pub rtol: f64,
    /// Integration step.
    #[arg(long, global = true, default_value_t = 1e-3)]
    pub dt: f64,
    /// Master seed of every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output path, `-` for standard output.
    #[arg(long, global = true, default_value = "-")]
    pub out: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct SystemArgs {
    /// Catalog name or path to a system file.
    #[arg(long)]
    pub system: String,
    /// Catalog parameter `name=value`; repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<String>,
}

#[derive(Debug, Args, Clone)]
pub struct PathArgs {
    /// Start point, comma separated; defaults to the catalog start point.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    /// Final time.
    #[arg(long, default_value = "1")]
    pub t: String,
    #[arg(long, default_value_t = 100)]
    pub paths: usize,
    /// Store every K-th step.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Condition {
    Ufg,
    Hc,
    Phc,
    Oac,
    Oac2,
    Kalman,
    Lyapunov,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Browse the built-in examples.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
    /// Run a condition checker on sample points.
    Check(CheckArgs),
    /// Split the drift into its frame projection and `V0perp`.
    Decompose(DecomposeArgs),
    /// Build a local chart and verify its straightened structure.
    Chart(ChartArgs),
    /// Simulate paths and write them as CSV.
    Simulate {
        #[command(flatten)]
        sys: SystemArgs,
        #[command(flatten)]
        path: PathArgs,
        /// Also write a JSON summary here.
        #[arg(long)]
        report: Option<String>,
    },
    /// Auxiliary process `Z_t = e^{-t V0perp}(X_t)` as CSV.
    Zproc {
        #[command(flatten)]
        sys: SystemArgs,
        #[command(flatten)]
        path: PathArgs,
        #[arg(long)]
        level: Option<usize>,
        #[arg(long)]
        report: Option<String>,
    },
    /// Rank of `R_m` with `V0` along simulated paths.
    Ranks {
        #[command(flatten)]
        sys: SystemArgs,
        #[command(flatten)]
        path: PathArgs,
        #[arg(long)]
        level: Option<usize>,
    },
    /// Malliavin matrices at the final time and their block structure.
    Malliavin(MalliavinArgs),
    /// Distance of coordinate marginals to reference laws over time.
    Converge(ConvergeArgs),
    /// Stationary Fokker-Planck residual of a density.
    Fpresidual(FpArgs),
    /// Semigroup derivative `W P_t f(x)` by central differences.
    Derivative(DerivativeArgs),
}

#[derive(Debug, Subcommand)]
pub enum CatalogAction {
    /// One line per entry.
    List,
    /// Entry details as JSON, or its system file with `--export`.
    Show {
        name: String,
        #[arg(long = "param", value_name = "NAME=VALUE")]
        params: Vec<String>,
        #[arg(long)]
        export: bool,
    },
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub sys: SystemArgs,
    #[arg(long, value_enum)]
    pub condition: Condition,
    /// Bracket level `m`; defaults to the catalog level.
    #[arg(long)]
    pub level: Option<usize>,
    #[arg(long)]
    pub lambda0: Option<f64>,
    /// Additional lambda0 values to run, comma separated.
    #[arg(long)]
    pub lambda0_sweep: Option<String>,
    /// Sample box `lo:hi,...`; defaults to the catalog domain.
    #[arg(long = "box", allow_hyphen_values = true)]
    pub bounds: Option<String>,
    /// Points per axis.
    #[arg(long, default_value_t = DEFAULT_GRID)]
    pub grid: usize,
    /// Tolerance of the tested quantity.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// UFG coefficient size above which the verdict is suspect.
    #[arg(long, default_value_t = ufgsde::geometry::DEFAULT_BLOWUP)]
    pub blowup: f64,
    /// Lyapunov function; defaults to the catalog certificate.
    #[arg(long)]
    pub phi: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub c1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub c2: Option<f64>,
    /// Times along the ODE block for the Lyapunov check.
    #[arg(long, default_value = "0.5,1,2,5,10")]
    pub ode_times: String,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub sys: SystemArgs,
    /// File with one comma-separated point per line.
    #[arg(long, conflicts_with = "bounds")]
    pub points: Option<String>,
    #[arg(long = "box", allow_hyphen_values = true)]
    pub bounds: Option<String>,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long)]
    pub level: Option<usize>,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct ChartArgs {
    #[command(flatten)]
    pub sys: SystemArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    /// Chart cube radius.
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    #[arg(long)]
    pub level: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Fraction of the cube the samples are drawn from.
    #[arg(long, default_value_t = 0.5)]
    pub shrink: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub fd_step: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub roundtrip_tol: f64,
}

#[derive(Debug, Args)]
pub struct MalliavinArgs {
    #[command(flatten)]
    pub sys: SystemArgs,
    #[command(flatten)]
    pub path: PathArgs,
    /// Size of the upper block; defaults to the dimension.
    #[arg(long)]
    pub split: Option<usize>,
    #[arg(long, default_value_t = ufgsde::malliavin::DEFAULT_BLOCK_TOL)]
    pub block_tol: f64,
    #[arg(long, default_value_t = ufgsde::malliavin::DEFAULT_COND_THRESHOLD)]
    pub cond: f64,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub sys: SystemArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long)]
    pub times: String,
    /// One law per coordinate separated by `;`: `gaussian(m,v)`, `dirac(a)`, `none`.
    #[arg(long)]
    pub reference: String,
    #[arg(long, default_value_t = 1e8)]
    pub escape_radius: f64,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    /// Required distance at the last time.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Also write `time,coordinate,ks,escape_fraction` rows here.
    #[arg(long)]
    pub csv: Option<String>,
}

#[derive(Debug, Args)]
pub struct FpArgs {
    #[command(flatten)]
    pub sys: SystemArgs,
    /// Density in the system variable; defaults to the catalog density.
    #[arg(long)]
    pub density: Option<String>,
    /// `lo:hi:n`; defaults to 400 points on the catalog domain.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct DerivativeArgs {
    #[command(flatten)]
    pub sys: SystemArgs,
    /// Observable in the system variables.
    #[arg(long)]
    pub f: String,
    /// `V0`, `V1`, .., `V0perp`, or a bracketed expression list.
    #[arg(long)]
    pub direction: String,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long, default_value = "1")]
    pub times: String,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    /// Draw the two evaluation points from separate streams.
    #[arg(long)]
    pub independent: bool,
    /// Closed form in `t` to compare against within 3 standard errors.
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long)]
    pub level: Option<usize>,
}

/// Outcome of a successful command: bytes for `--out` and the exit code.
pub(crate) struct Outcome {
    pub bytes: Vec<u8>,
    pub code: i32,
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Errors are reported as JSON on standard error and, for
/// commands whose output is a report, on `--out` too.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let exec = || commands::dispatch(&cli);
    let result = match cli.threads {
        Some(0) => Err(report::usage("--threads must be positive")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(exec),
            Err(e) => Err(report::usage(format!("cannot start {n} workers: {e}"))),
        },
        None => exec(),
    };
    match result {
        Ok(outcome) => match report::write_out(&cli.out, &outcome.bytes) {
            Ok(()) => outcome.code,
            Err(e) => {
                eprintln!("{}", e.message());
                e.exit_code()
            }
        },
        Err(e) => {
            let mut r = Report::new(commands::name(&cli.command), commands::metadata(&cli, BTreeMap::new()));
            r.verdict = "error".into();
            r.error = Some(report::ErrorInfo {
                kind: e.kind(),
                message: e.message().to_string(),
                exit_code: e.exit_code(),
            });
            let json = r.to_json();
            eprint!("{json}");
            if commands::emits_report(&cli.command) {
                let _ = report::write_out(&cli.out, json.as_bytes());
            }
            e.exit_code()
        }
    }
}
