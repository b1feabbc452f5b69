//! `cutpoint`: pick split points for a network and evaluate local, remote and
//! split deployments over a simulated link.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use cutpoint_core::profile::DEFAULT_BATCH;
use cutpoint_core::scenario::Qos;

use config::{Invalid, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "cutpoint", version, about = "Split-computing design explorer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct ConfigArgs {
    /// JSON run configuration
    #[arg(short, long)]
    config: PathBuf,

    /// Override a config key, e.g. `--set network.loss_rate=0.03`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(&self.config, &self.overrides)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the toy CNN and write a checkpoint
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint path (default: outputs.checkpoint)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the CS curve of a checkpoint and list candidate split points
    Profile {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write the curve as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train a bottleneck at one split point and fine-tune
    Split {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split index (position among conv/pool layers); default: top CS candidate
        #[arg(long)]
        layer: Option<usize>,
        /// Split checkpoint path (default: outputs.split_dir/split_<index>.json)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep deployments over the loss grid and rank them against the QoS
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sweep CSV path (default: outputs.sweep_csv, else stdout)
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Directory for event traces of frame 0 at every grid point
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Print layer statistics of a profile (built-in VGG16 by default)
    Summary {
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BATCH)]
        batch: usize,
        /// Machine-readable output
        #[arg(long)]
        csv: bool,
    },
    /// Rank the deployments of a sweep CSV
    Advise {
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        max_latency_s: f64,
        #[arg(long, default_value_t = 0.0)]
        min_accuracy: f64,
        /// Only consider rows at this loss rate (default: worst row per deployment)
        #[arg(long)]
        loss_rate: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out } => commands::train(&config.load()?, out),
        Command::Profile { checkpoint, csv } => commands::profile(&checkpoint, csv),
        Command::Split {
            config,
            checkpoint,
            layer,
            out,
        } => commands::split(&config.load()?, checkpoint, layer, out),
        Command::Simulate {
            config,
            checkpoint,
            csv,
            trace,
        } => commands::simulate(&config.load()?, checkpoint, csv, trace),
        Command::Summary { profile, batch, csv } => commands::summary(profile, batch, csv),
        Command::Advise {
            sweep,
            max_latency_s,
            min_accuracy,
            loss_rate,
        } => commands::advise_from_csv(
            &sweep,
            Qos {
                max_latency_s,
                min_accuracy,
            },
            loss_rate,
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
