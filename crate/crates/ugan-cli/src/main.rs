//! `ugan` — VAE-pretrained GAN training and evaluation runs driven by a
//! config file. Exit codes: 0 success, 2 config error, 3 data error,
//! 4 transfer mismatch, 5 runtime numeric failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use ugan_core::Error;

#[derive(Parser)]
#[command(name = "ugan", version, about = "Train GANs with VAE-pretrained generators")]
struct Cli {
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides [io] out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed (overrides [run] seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the variational autoencoder and save its checkpoints.
    PretrainVae,
    /// Train a GAN, optionally initializing the generator from a decoder checkpoint.
    TrainGan {
        /// Decoder checkpoint for generator_init = vae.
        #[arg(long)]
        vae_checkpoint: Option<PathBuf>,
    },
    /// Run the paired ordinary-vs-unbalanced experiment over n_seeds.
    Experiment,
    /// Evaluate a generator checkpoint (classifier score or mode coverage).
    Eval {
        /// Generator checkpoint (overrides [io] checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Train and save the score classifier if its checkpoint is missing.
        #[arg(long)]
        train_classifier: bool,
    },
    /// Emit samples from a generator checkpoint.
    Sample {
        /// Generator checkpoint (overrides [io] checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        columns: usize,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Parse { .. } | Error::Io { .. } => 3,
        Error::TransferMismatch { .. } => 4,
        Error::Dimension { .. } | Error::Contract(_) | Error::Numeric(_) => 5,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let mut resolved = config::load(config_path)?;
    if let Some(out) = cli.out {
        resolved.io.out_dir = out;
    }
    if let Some(seed) = cli.seed {
        resolved.train.seed = seed;
    }
    match cli.command {
        Command::PretrainVae => commands::cmd_pretrain_vae(&resolved, cli.quiet),
        Command::TrainGan { vae_checkpoint } => {
            commands::cmd_train_gan(&resolved, vae_checkpoint.as_deref(), cli.quiet)
        }
        Command::Experiment => commands::cmd_experiment(&resolved, cli.quiet),
        Command::Eval {
            checkpoint,
            train_classifier,
        } => commands::cmd_eval(&resolved, checkpoint.as_deref(), train_classifier, cli.quiet),
        Command::Sample {
            checkpoint,
            count,
            columns,
        } => commands::cmd_sample(&resolved, checkpoint.as_deref(), count, columns, cli.quiet),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
