//! `mrgeo`: geometry diagnostics, projection checks and few-shot MIL experiments.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures are
//! reported on stderr as a single JSON object.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{resolve_seed, RunConfig, SeedSource, SEED_ENV};

pub const SCHEMA_VERSION: u32 = 1;
const DEFAULT_OUT: &str = "mrgeo-out";

#[derive(Debug, Parser)]
#[command(name = "mrgeo", version, about = "Manifold-geometry diagnostics and MR-block MIL experiments")]
struct Cli {
    /// Random seed; overrides MRGEO_SEED and the config file (default 42).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (default: mrgeo-out).
    #[arg(long, short, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Gram spectrum, entropy and effective rank of a feature matrix.
    Spectrum(commands::SpectrumArgs),
    /// Tangent-space drift curve over k-NN hop distance.
    Tangent(commands::TangentArgs),
    /// Monte-Carlo checks of random-projection properties.
    Verify(commands::VerifyArgs),
    /// Low-rank correction of an anchor towards a target matrix.
    Approx(commands::ApproxArgs),
    /// Generate a synthetic bag dataset.
    Gen(commands::GenArgs),
    /// Train and evaluate one model on one few-shot episode.
    Train(commands::TrainArgs),
    /// Paired ABMIL vs MR-ABMIL experiment over shots and seeds.
    Compare(commands::CompareArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Spectrum(_) => "spectrum",
            Command::Tangent(_) => "tangent",
            Command::Verify(_) => "verify",
            Command::Approx(_) => "approx",
            Command::Gen(_) => "gen",
            Command::Train(_) => "train",
            Command::Compare(_) => "compare",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(mrgeo::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Runtime(e) => match e {
                mrgeo::Error::Dimension(_) => "dimension",
                mrgeo::Error::Validation(_) => "validation",
                mrgeo::Error::Convergence { .. } => "convergence",
                mrgeo::Error::Parse { .. } => "parse",
                mrgeo::Error::NonFiniteLoss { .. } => "non_finite_loss",
                mrgeo::Error::Io(_) => "io",
                mrgeo::Error::Json(_) => "json",
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Runtime(e) => e.to_string(),
        }
    }
}

impl From<mrgeo::Error> for CliError {
    fn from(e: mrgeo::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Resolved global settings handed to every command.
pub struct Context {
    pub seed: u64,
    pub out: PathBuf,
    pub config: RunConfig,
    written: Vec<String>,
}

impl Context {
    /// Pretty JSON, atomically written into the output directory.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        mrgeo::io::write_atomic(&self.out.join(name), bytes)?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn note_written(&mut self, name: &str) {
        self.written.push(name.to_string());
    }
}

/// Absolute form of a user path; inputs must exist.
pub fn resolve_input(path: &Path) -> CliResult<PathBuf> {
    std::fs::canonicalize(path).map_err(|e| {
        CliError::Runtime(std::io::Error::new(e.kind(), format!("cannot open {}: {e}", path.display())).into())
    })
}

fn absolute(path: &Path) -> CliResult<PathBuf> {
    if path.is_absolute() {
        Ok(path.to_path_buf())
    } else {
        Ok(std::env::current_dir()?.join(path))
    }
}

#[derive(Serialize)]
struct Meta<'a> {
    schema_version: u32,
    tool_version: &'a str,
    command: &'a str,
    args: Vec<String>,
    seed: u64,
    seed_source: SeedSource,
    started_unix_secs: u64,
    elapsed_secs: f64,
    outputs: &'a [String],
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    schema_version: u32,
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
}

fn run(cli: Cli) -> CliResult<()> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let (seed, seed_source) = resolve_seed(cli.seed, env_seed.as_deref(), config.seed)?;
    let out = absolute(cli.out.as_deref().or(config.out.as_deref()).unwrap_or(Path::new(DEFAULT_OUT)))?;
    let name = cli.command.name();
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let mut ctx = Context { seed, out, config, written: Vec::new() };
    match cli.command {
        Command::Spectrum(a) => commands::spectrum(&mut ctx, a)?,
        Command::Tangent(a) => commands::tangent(&mut ctx, a)?,
        Command::Verify(a) => commands::verify(&mut ctx, a)?,
        Command::Approx(a) => commands::approx(&mut ctx, a)?,
        Command::Gen(a) => commands::gen(&mut ctx, a)?,
        Command::Train(a) => commands::train(&mut ctx, a)?,
        Command::Compare(a) => commands::compare(&mut ctx, a)?,
    }
    let outputs = std::mem::take(&mut ctx.written);
    let meta = Meta {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        command: name,
        args: std::env::args().skip(1).collect(),
        seed,
        seed_source,
        started_unix_secs: started,
        elapsed_secs: clock.elapsed().as_secs_f64(),
        outputs: &outputs,
    };
    ctx.write_json("meta.json", &meta)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are not errors
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report =
                ErrorReport { schema_version: SCHEMA_VERSION, error: ErrorBody { kind: e.kind(), message: e.message() } };
            eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            ExitCode::from(e.exit_code())
        }
    }
}
