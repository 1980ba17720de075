//! Operator surface for the two-stream RGB/grey re-identification pipeline.
//!
//! Exit codes: 0 success, 2 configuration/usage errors, 3 data errors
//! (manifest, images, IO), 4 artifact errors (checkpoints, feature files,
//! shape mismatches), 5 numeric failures.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "greyfuse",
    version,
    about = "Two-stream RGB/grey person re-identification: toy data, training, \
             feature extraction, CMC/mAP evaluation and ranking montages"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dotted-key config override, e.g. --set loss.lambda=0.5 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Root random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset (images + manifest).
    PrepareToy(commands::PrepareToyArgs),
    /// Train on a manifest or Market-style directory.
    Train(commands::TrainArgs),
    /// Extract features from a checkpoint into a feature file.
    Extract(commands::ExtractArgs),
    /// Score query features against gallery features.
    Evaluate(commands::EvaluateArgs),
    /// Render the top-k ranking of one query.
    Rank(commands::RankArgs),
    /// Convert one RGB image to grey.
    ConvertGrey(commands::ConvertGreyArgs),
}

fn exit_code(err: &anyhow::Error) -> i32 {
    use greyfuse_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::InvalidArgument(_) => 2,
                E::Manifest { .. } | E::FilenamePattern(_) | E::Image { .. } | E::Io { .. } => 3,
                E::Checkpoint { .. }
                | E::CheckpointConfig { .. }
                | E::FeatureFile { .. }
                | E::Shape(_) => 4,
                E::NonFiniteLoss { .. } | E::Loss(_) => 5,
            };
        }
    }
    1
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();

    let cfg = match RunConfig::load(
        cli.config.as_deref(),
        &cli.sets,
        cli.seed,
        cli.out.as_deref(),
    ) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(2);
        }
    };

    let result = match &cli.command {
        Command::PrepareToy(args) => commands::run_prepare_toy(&cfg, args),
        Command::Train(args) => commands::run_train(&cfg, args),
        Command::Extract(args) => commands::run_extract(&cfg, args),
        Command::Evaluate(args) => commands::run_evaluate(&cfg, args),
        Command::Rank(args) => commands::run_rank(&cfg, args),
        Command::ConvertGrey(args) => commands::run_convert_grey(&cfg, args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}
