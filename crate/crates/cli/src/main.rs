//! Declarative front door: a workflow config names a primitive, data files,
//! strategy (or "auto"), oracle backend, and budget; subcommands run it and
//! write report.json plus table.txt. Exit codes: 0 success, 2 config error,
//! 3 budget exhausted, 4 no feasible strategy, 5 parse-retry exhaustion,
//! 6 replay mismatch, 1 anything else.

mod config;
mod report;
mod runner;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use noracle_core::harness::Primitive;
use serde_json::Value;

use config::{Backend, ConfigError, RunMode, WorkflowConfig};
use report::first_divergence;
use runner::{execute, Executed, RunError};

#[derive(Parser)]
#[command(name = "noracle", version, about = "Budgeted data processing over a noisy oracle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Workflow config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Strategy id, or "auto" to pick via validation; overrides the config.
    #[arg(long)]
    strategy: Option<String>,
    /// Total-token budget; overrides budget.max_total_tokens.
    #[arg(long)]
    budget_tokens: Option<u64>,
    /// Seed for the simulated oracle and item shuffling; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker-pool bound for oracle calls.
    #[arg(long, default_value_t = 8)]
    parallelism: usize,
    /// Report directory; overrides workflow.output (default "out").
    #[arg(long)]
    output: Option<PathBuf>,
    /// Oracle backend; overrides the config.
    #[arg(long, value_enum)]
    oracle: Option<BackendArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Simulated,
    Remote,
}

impl From<BackendArg> for Backend {
    fn from(arg: BackendArg) -> Self {
        match arg {
            BackendArg::Simulated => Backend::Simulated,
            BackendArg::Remote => Backend::Remote,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Order items by the configured criterion.
    Sort(RunArgs),
    /// Decide which record pairs refer to the same entity.
    Resolve(RunArgs),
    /// Fill a masked attribute on query records.
    Impute(RunArgs),
    /// Run every candidate strategy and report cost and accuracy side by side.
    Evaluate(RunArgs),
    /// Evaluate candidates on a validation split and pick one for the budget.
    Recommend(RunArgs),
    /// Re-execute a simulated run from its report and verify byte identity.
    Replay {
        /// Path to a previously written report.json.
        report: PathBuf,
        #[arg(long, default_value_t = 8)]
        parallelism: usize,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("cannot read report {path}: {source}")]
    ReadReport {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report {0} is not valid JSON: {1}")]
    BadReport(String, String),
    #[error("report {0} has no config snapshot to replay")]
    NoSnapshot(String),
    #[error("cannot replay a remote-backend report; remote responses are not reproducible")]
    RemoteReplay,
    #[error("replay mismatch at {field}")]
    ReplayMismatch { field: String },
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Run(RunError::Config(_)) => 2,
            CliError::Run(_) => 1,
            CliError::ReadReport { .. } | CliError::BadReport(..) | CliError::NoSnapshot(_) => 2,
            CliError::RemoteReplay => 2,
            CliError::ReplayMismatch { .. } => 6,
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Sort(args) => run_mode(args, RunMode::Run, Some((Primitive::Sort, "sort"))),
        Command::Resolve(args) => {
            run_mode(args, RunMode::Run, Some((Primitive::Resolve, "resolve")))
        }
        Command::Impute(args) => run_mode(args, RunMode::Run, Some((Primitive::Impute, "impute"))),
        Command::Evaluate(args) => run_mode(args, RunMode::Evaluate, None),
        Command::Recommend(args) => run_mode(args, RunMode::Recommend, None),
        Command::Replay { report, parallelism } => replay(&report, parallelism),
    }
}

fn run_mode(
    args: RunArgs,
    mode: RunMode,
    expected: Option<(Primitive, &'static str)>,
) -> Result<ExitCode, CliError> {
    let mut config = WorkflowConfig::load(&args.config).map_err(RunError::Config)?;
    if let Some((primitive, subcommand)) = expected {
        if config.workflow.primitive != primitive {
            return Err(RunError::Config(ConfigError::PrimitiveMismatch {
                configured: config.workflow.primitive,
                subcommand,
            })
            .into());
        }
    }
    config.workflow.mode = mode;
    if let Some(strategy) = args.strategy {
        config.workflow.strategy = Some(strategy);
    }
    if let Some(seed) = args.seed {
        config.workflow.seed = seed;
    }
    if let Some(tokens) = args.budget_tokens {
        config.budget.max_total_tokens = Some(tokens);
    }
    if let Some(backend) = args.oracle {
        config.oracle.backend = backend.into();
    }

    let executed = execute(&config, args.parallelism)?;
    let dir = config.output_dir(args.output.as_deref());
    let (json_path, table_path) = executed
        .report
        .write(&dir)
        .map_err(|source| RunError::Write { path: dir.display().to_string(), source })?;
    print!("{}", executed.report.to_table());
    if let Some(pick) = &executed.report.recommendation {
        println!(
            "recommended: {} (projected {} tokens)",
            pick.strategy,
            pick.projected.total_tokens()
        );
    }
    println!("wrote {} and {}", json_path.display(), table_path.display());
    Ok(exit_status(&executed))
}

fn exit_status(executed: &Executed) -> ExitCode {
    if executed.no_feasible {
        eprintln!("no strategy fits the budget");
        return ExitCode::from(4);
    }
    if executed.truncated {
        eprintln!("budget exhausted before completion; results are partial");
        return ExitCode::from(3);
    }
    if executed.unanswered > 0 {
        eprintln!("{} tasks unanswered after parse retries", executed.unanswered);
        return ExitCode::from(5);
    }
    ExitCode::SUCCESS
}

/// Re-runs the recorded config and compares the fresh report against the file
/// byte for byte. Oracle outcomes are independent of parallelism, so any
/// worker-pool bound must reproduce the original.
fn replay(path: &Path, parallelism: usize) -> Result<ExitCode, CliError> {
    let display = path.display().to_string();
    let bytes = std::fs::read(path)
        .map_err(|source| CliError::ReadReport { path: display.clone(), source })?;
    let recorded: Value = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::BadReport(display.clone(), e.to_string()))?;
    let snapshot = recorded
        .get("config")
        .cloned()
        .ok_or_else(|| CliError::NoSnapshot(display.clone()))?;
    let config: WorkflowConfig = serde_json::from_value(snapshot)
        .map_err(|e| CliError::BadReport(display.clone(), e.to_string()))?;
    if config.oracle.backend == Backend::Remote {
        return Err(CliError::RemoteReplay);
    }
    let executed = execute(&config, parallelism)?;
    let replayed_bytes = executed.report.to_json_bytes();
    if replayed_bytes == bytes {
        println!("replay ok: {display}");
        return Ok(ExitCode::SUCCESS);
    }
    let replayed: Value = serde_json::from_slice(&replayed_bytes).expect("fresh report parses");
    let field =
        first_divergence(&recorded, &replayed).unwrap_or_else(|| "formatting".to_owned());
    Err(CliError::ReplayMismatch { field })
}
