//! Experiment runner: trains the classifier, builds dictionaries, attacks
//! test samples and writes CSV reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::Run;
use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "sbsr", version, about = "Block-sparse recovery of attacked signals: experiment runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the classifier and write a checkpoint.
    Train(CommonArgs),
    /// Attack test samples and report per-sample and aggregate accuracy.
    Evaluate(CommonArgs),
    /// Recovery-condition margins for every (class, attack) pair.
    Geometry(CommonArgs),
    /// Accuracy as the test-attack strength varies, dictionaries fixed.
    Sweep(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Checkpoint to write (`train`) or read; defaults to `<out>/model.sbsr`.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let (args, cmd): (&CommonArgs, fn(&Run) -> Result<(), CliError>) = match &cli.command {
        Command::Train(a) => (a, commands::train),
        Command::Evaluate(a) => (a, commands::evaluate),
        Command::Geometry(a) => (a, commands::geometry),
        Command::Sweep(a) => (a, commands::sweep),
    };
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, as in repeated in-process runs.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = ExperimentConfig::load(&args.config)?;
    let run = Run::new(cfg, args.out.clone(), args.seed, args.checkpoint.clone());
    cmd(&run)
}
