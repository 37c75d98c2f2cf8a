//! Command-line driver for `sgnn-core`.
//!
//! Each subcommand reads a [`RunConfig`], writes its artifacts atomically
//! into the output directory together with `config.resolved.toml`, and maps
//! failures onto exit codes: 2 for configuration problems, 3 for numeric
//! failures, 4 for a bound violation found by `theory-check`.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::RunConfig;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_BOUND: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] sgnn_core::Error),

    #[error("{0} bound violation(s); reproduction files in {1}")]
    BoundViolation(usize, PathBuf),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use sgnn_core::Error as E;
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::BoundViolation(..) => EXIT_BOUND,
            CliError::Core(E::Numeric(_)) => EXIT_NUMERIC,
            CliError::Core(E::Io { .. } | E::Checkpoint(_)) => EXIT_FAILURE,
            // bad shapes, dataset parse errors and broken contracts all trace
            // back to what the user asked for
            CliError::Core(_) => EXIT_CONFIG,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sgnn", version, about = "Stacked separable GNN training and checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Config override, e.g. `--set train.eta=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a stack; writes model.sgnn, trace.csv, embeddings.csv.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Also train over the η grid 1e-5..1e5 and write eta_sweep.csv.
        #[arg(long)]
        eta_sweep: bool,
    },
    /// Evaluate a checkpoint; writes metrics.json.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint to evaluate (default: OUT/model.sgnn).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Time per update across graph sizes; writes bench.csv.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sweep planted instances through the error bounds.
    TheoryCheck {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write a stochastic block model dataset in the text formats.
    SbmGen {
        #[command(flatten)]
        common: CommonArgs,
    },
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Bench { common }
            | Command::TheoryCheck { common }
            | Command::SbmGen { common } => common,
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let common = cli.command.common();
    let cfg = RunConfig::load(common.config.as_deref(), &common.overrides, common.seed)?;
    let out = common.out.clone();
    match &cli.command {
        Command::Train { eta_sweep, .. } => commands::train(&cfg, &out, *eta_sweep).map(|_| ()),
        Command::Eval { checkpoint, .. } => {
            let ckpt = checkpoint.clone().unwrap_or_else(|| out.join(commands::MODEL_FILE));
            let m = commands::eval(&cfg, &ckpt, &out)?;
            println!("{}", m.to_json());
            Ok(())
        }
        Command::Bench { .. } => {
            let rows = commands::bench(&cfg, &out)?;
            print!("{}", commands::bench_csv(&rows));
            Ok(())
        }
        Command::TheoryCheck { .. } => commands::theory_check(&cfg, &out),
        Command::SbmGen { .. } => commands::sbm_gen(&cfg, &out),
    }
}

/// Parses `std::env::args`, runs, and reports errors on stderr.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sgnn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
