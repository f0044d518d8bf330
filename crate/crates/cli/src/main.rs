//! `wdis`: generate datasets, train, evaluate and sample weakly
//! disentangled models.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Which;
use crate::config::{Overrides, RunConfig};
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "wdis", version, about = "Weakly disentangled representation learning")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for data generation, initialization, training and evaluation.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory holding the dataset, checkpoint and reports unless the
    /// config names other paths.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Preset: hwf-like, dsprites or shapes3d.
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Override a config value, e.g. `--set train.warmup_epochs=10`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a dataset in the native format.
    Generate,
    /// Train a model and write its checkpoint and loss history.
    Train {
        /// Continue from the stored checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop after this many total epochs.
        #[arg(long)]
        until: Option<usize>,
    },
    /// Evaluate a checkpoint and write CSV/JSON reports.
    Eval {
        #[arg(long, value_enum, default_value = "all")]
        which: Which,
        /// Checkpoint to evaluate instead of the configured one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Decode a chain of relations from a start combination into a PNG strip.
    Sample {
        /// Generative factor values, comma separated, e.g. `center,center,square`.
        #[arg(long)]
        start: String,
        /// Comma-separated relations applied in order; binary relations take `name:arg`.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        chain: Vec<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output image; defaults to `sample.png` in the reports directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let overrides = Overrides {
        preset: cli.preset,
        seed: cli.seed,
        out: cli.out,
        set: cli.set,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Train { resume, until } => commands::train(&cfg, resume, until),
        Command::Eval { which, checkpoint } => commands::eval(&cfg, checkpoint.as_deref(), which),
        Command::Sample {
            start,
            chain,
            checkpoint,
            output,
        } => {
            let output = output.unwrap_or_else(|| cfg.paths.reports.join("sample.png"));
            commands::sample(&cfg, checkpoint.as_deref(), &start, &chain, &output)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
