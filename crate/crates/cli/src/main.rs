//! `cfx` — command-line driver for the counterfactual-explanation pipeline.
//!
//! Four stages, each resumable from the files the previous one wrote:
//!
//! ```text
//! cfx train discriminator|ae|ae-per-class|dgcex|dadgcex
//! cfx explain [--method M] [--id N [--target C]]
//! cfx evaluate
//! cfx report
//! ```
//!
//! Configuration comes from an optional key=value file (`--config`), with
//! `--seed`, `--out`, and `--desk-scale` overriding it. Exit codes: 0 on
//! success, 2 for configuration errors, 3 for missing prerequisites, 4 for
//! violated invariants.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cfx_core::config::ExperimentConfig;
use cfx_core::pipeline::{ExplainScope, Pipeline, TrainComponent};
use cfx_core::record::Method;
use cfx_core::CoreError;

#[derive(Parser)]
#[command(
    name = "cfx",
    about = "Train, explain, evaluate, and report counterfactual explanations for MNIST classifiers"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (key = value sections); defaults apply
    /// for every key the file omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Shrink to the desk preset: 10k training images, 500 evaluated
    /// instances, reduced epochs — the full pipeline in under an hour.
    #[arg(long, global = true)]
    desk_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its checkpoint.
    Train {
        /// discriminator | ae | ae-per-class | dgcex | dadgcex
        component: String,
    },
    /// Generate counterfactuals and write result logs plus image files.
    Explain {
        /// Restrict to one method (default: the full three-method protocol).
        #[arg(long)]
        method: Option<String>,
        /// Explain a single test instance instead of the evaluation subset.
        #[arg(long)]
        id: Option<usize>,
        /// Counterfactual class for a single-instance run.
        #[arg(long)]
        target: Option<u8>,
    },
    /// Compute both metrics for every explained instance into metrics.csv.
    Evaluate,
    /// Render summary tables, pairwise matrices, histograms, and image grids.
    Report,
}

fn resolve_config(common: &Common) -> Result<ExperimentConfig, CoreError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if common.desk_scale {
        cfg.desk_scale();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CoreError> {
    let cfg = resolve_config(&cli.common)?;
    let pipeline = Pipeline::new(cfg)?;
    match cli.command {
        Command::Train { component } => pipeline.train(TrainComponent::parse(&component)?),
        Command::Explain { method, id, target } => {
            let method = method.as_deref().map(Method::parse).transpose()?;
            let scope = match id {
                Some(id) => ExplainScope::Single(id),
                None => ExplainScope::All,
            };
            pipeline.explain(method, scope, target)
        }
        Command::Evaluate => pipeline.evaluate(),
        Command::Report => {
            let text = pipeline.report()?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
