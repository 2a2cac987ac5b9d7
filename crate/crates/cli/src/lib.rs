//! Config-driven runner for scaling studies, probes and bound checks.
//!
//! Exit codes: 0 success, 1 a check failed under `--assert`, 2 bad usage or
//! configuration, 3 an id that does not resolve (or a group the command cannot
//! route), 4 an I/O failure.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use caliblab_core::Error;
use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod manifest;

pub use config::Config;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Unresolved(String),
    Io(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Unresolved(_) => 3,
            CliError::Io(_) => 4,
            CliError::Core(e) => match e {
                Error::UnknownId(_) | Error::PredictionDependentGroup(_) => 3,
                Error::Io(_) | Error::Csv(_) => 4,
                _ => 2,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Unresolved(m) => write!(f, "unresolved: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "caliblab", version, about = "Calibration lower-bound laboratory")]
#[command(after_help = "Config keys can be overridden with --<dotted.key>=<value>, e.g. --run.seed=7.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a scaling study and write scaling, per-group and manifest files.
    Scaling(RunArgs),
    /// Run a Monte Carlo probe or the exact identity suite.
    Probe(ProbeArgs),
    /// Run the oracle or the pattern-routing bound check.
    Bounds {
        /// `oracle` or `reduction`.
        which: String,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Config file (flat `key=value` lines).
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit with status 1 when a check or acceptance window fails.
    #[arg(long)]
    pub assert: bool,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    /// return-pmf, root-return, martingale, bucketing or identities.
    pub name: String,
    /// Largest n (return-pmf) or largest length (identities).
    #[arg(long)]
    pub n: Option<String>,
    /// Replicates; accepts forms like 1e6.
    #[arg(long)]
    pub reps: Option<String>,
    /// Horizon list, e.g. `4096` or `2^6..2^14`.
    #[arg(long = "L")]
    pub l: Option<String>,
    /// Bucketing strategy, or `all`.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Step size for bucketing.
    #[arg(long)]
    pub h: Option<String>,
    /// Increment offset for the martingale probe.
    #[arg(long)]
    pub x: Option<String>,
    /// Indicator rule: all_ones, stop_when_small:<c>, thinned:<num>/<den>.
    #[arg(long)]
    pub indicator: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Run replicates on the calling thread.
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub assert: bool,
}

/// Split `--dotted.key=value` overrides from the arguments clap sees.
fn split_overrides(args: Vec<OsString>) -> (Vec<OsString>, Vec<String>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.to_str().and_then(|s| s.strip_prefix("--")) {
            Some(s) if s.split_once('=').is_some_and(|(k, _)| k.contains('.')) => overrides.push(s.to_string()),
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let (args, overrides) = split_overrides(args.into_iter().map(Into::into).collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::dispatch(cli.command, &overrides) {
        Ok(passed) => {
            if passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("caliblab: {e}");
            e.exit_code()
        }
    }
}
