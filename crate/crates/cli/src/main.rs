//! `rgl`: gradient checks, training runs, gradient-flow diagnostics and
//! input standardization from the command line.
//!
//! Exit codes: 0 success, 1 check or runtime failure, 2 configuration error.

mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::Outcome;
use config::{ConfigError, LoadedConfig};

#[derive(Parser)]
#[command(name = "rgl", version, about = "Recurrent network gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment configuration (TOML). `gradcheck` falls back to a built-in Vanilla LSTM config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `[train] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Compare analytic gradients with central differences.
    Gradcheck(RunArgs),
    /// Train with gradient descent; writes history.csv and checkpoint.rgl.
    Train(RunArgs),
    /// Gradient-flow analysis; writes decay_curve.csv, flow_report.txt and q_audit.txt.
    Diagnose(RunArgs),
    /// Standardize a CSV file column by column.
    Standardize {
        input: PathBuf,
        output: PathBuf,
        /// Where to write the per-column mean and standard deviation.
        stats: PathBuf,
        /// Reuse previously fitted statistics instead of fitting on INPUT.
        #[arg(long)]
        apply: Option<PathBuf>,
    },
}

fn load(args: &RunArgs, allow_default: bool) -> Result<LoadedConfig> {
    match &args.config {
        Some(p) => Ok(LoadedConfig::from_file(p)?),
        None if allow_default => Ok(LoadedConfig::default_config()),
        None => Err(ConfigError {
            path: "<command line>".into(),
            message: "--config is required".into(),
        }
        .into()),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("RGL_THREADS") else {
        return Ok(());
    };
    let n: usize = value.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| ConfigError {
        path: "RGL_THREADS".into(),
        message: format!("expected a positive integer, got `{value}`"),
    })?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome> {
    configure_threads()?;
    match cli.command {
        Command::Gradcheck(a) => commands::gradcheck(&load(&a, true)?, a.seed, &a.out),
        Command::Train(a) => commands::train_cmd(&load(&a, false)?, a.seed, &a.out),
        Command::Diagnose(a) => commands::diagnose(&load(&a, false)?, a.seed, &a.out),
        Command::Standardize {
            input,
            output,
            stats,
            apply,
        } => commands::standardize_cmd(&input, &output, &stats, apply.as_ref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
