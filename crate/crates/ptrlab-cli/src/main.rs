//! `ptrlab`: experiment front end for classification fine-tuning with a
//! pseudo-task regularizer.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Parser, Subcommand};

use ptrlab_cli::config::{load_config, ConfigError, ExperimentConfig};
use ptrlab_cli::runner;

#[derive(Parser)]
#[command(
    name = "ptrlab",
    version,
    about = "Classification fine-tuning distracted by a balanced pseudo-regression task: \
             training, paired comparisons, diagnostics, gradient checks, and a toy variance lab."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per configured seed, writing a report, per-epoch CSV,
    /// and checkpoint under the output directory.
    Train {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Validate and echo the effective config, then exit without training.
        #[arg(long)]
        dry_run: bool,
        /// Force optimizer weight decay to zero.
        #[arg(long)]
        no_weight_decay: bool,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train paired baseline/regularized runs per seed from identical
    /// initialization and data order, then aggregate into comparison.json.
    Compare {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Validate and echo the effective config, then exit without training.
        #[arg(long)]
        dry_run: bool,
        /// Force optimizer weight decay to zero.
        #[arg(long)]
        no_weight_decay: bool,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the config's validation split.
    Eval {
        /// Experiment configuration (JSON) describing network and data.
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint file produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prediction diagnostics for a checkpoint, optionally against a
    /// baseline checkpoint (enables rectification analysis).
    Diagnose {
        /// Experiment configuration (JSON) describing network and data.
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint under diagnosis.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Baseline checkpoint for rectification analysis.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Also write the confusion-mass matrix as CSV.
        #[arg(long)]
        confusion_csv: Option<PathBuf>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient check on a stock MLP; non-zero exit when
    /// the worst relative error reaches 1e-4.
    Gradcheck {
        /// Seed for parameters and the probe batch.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Central-difference step size, in (0, 1e-2].
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo variance of the single-neuron gradient against its
    /// analytic prediction.
    Toy {
        /// Neuron-output sampler as JSON, e.g. {"kind":"uniform","low":0.0,"high":1.0}
        /// or {"kind":"constant","value":0.5}.
        #[arg(long, default_value = r#"{"kind":"uniform","low":0.0,"high":1.0}"#)]
        f_o: String,
        /// Regression-target sampler as JSON.
        #[arg(long, default_value = r#"{"kind":"uniform","low":0.0,"high":2.0}"#)]
        t: String,
        /// Fixed input to the neuron.
        #[arg(long, default_value_t = 1.0)]
        x: f64,
        /// Number of Monte-Carlo draws.
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        /// Seed for the draws.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Loads the config and applies command-line overrides.
fn effective_config(
    path: &Path,
    seed: Option<u64>,
    no_weight_decay: bool,
    out: Option<PathBuf>,
) -> Result<ExperimentConfig> {
    let mut config = load_config(path)?;
    if let Some(seed) = seed {
        config.seeds = vec![seed];
    }
    if no_weight_decay {
        config.optimizer.weight_decay = 0.0;
    }
    if let Some(dir) = out {
        config.output_dir = dir;
    }
    Ok(config)
}

fn echo_config(config: &ExperimentConfig) -> Result<()> {
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    runner::print_stdout(&text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, dry_run, no_weight_decay, out } => {
            let config = effective_config(&config, seed, no_weight_decay, out)?;
            if dry_run {
                return echo_config(&config);
            }
            runner::cmd_train(&config)?;
            Ok(())
        }
        Command::Compare { config, seed, dry_run, no_weight_decay, out } => {
            let config = effective_config(&config, seed, no_weight_decay, out)?;
            if dry_run {
                return echo_config(&config);
            }
            runner::cmd_compare(&config)?;
            Ok(())
        }
        Command::Eval { config, checkpoint, out } => {
            let config = load_config(&config)?;
            runner::cmd_eval(&config, &checkpoint, out.as_deref())?;
            Ok(())
        }
        Command::Diagnose { config, checkpoint, baseline, confusion_csv, out } => {
            let config = load_config(&config)?;
            runner::cmd_diagnose(
                &config,
                &checkpoint,
                baseline.as_deref(),
                confusion_csv.as_deref(),
                out.as_deref(),
            )
        }
        Command::Gradcheck { seed, epsilon, out } => {
            runner::cmd_gradcheck(seed, epsilon, out.as_deref())
        }
        Command::Toy { f_o, t, x, n, seed, out } => {
            runner::cmd_toy(&f_o, &t, x, n, seed, out.as_deref())?;
            Ok(())
        }
    }
}

/// 2 for configuration problems (including range errors surfaced by the
/// core crate), 1 for everything else.
fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(core) = cause.downcast_ref::<ptrlab_core::Error>() {
            if matches!(core, ptrlab_core::Error::Config(_)) {
                return 2;
            }
        }
    }
    1
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}
