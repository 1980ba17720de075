use anyhow::{bail, Result};
use clap::Args;
use greyfuse_core::dataset::{parse_manifest, scan_market_directory, DatasetSplit};
use greyfuse_core::trainer;
use std::path::PathBuf;

use crate::config::RunConfig;

/// Train the two-stream network on a manifest or Market-style directory.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest file (overrides the config's dataset.manifest).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Market1501-style dataset root (overrides dataset.market_dir).
    #[arg(long = "market-dir")]
    pub market_dir: Option<PathBuf>,
    /// Continue a checkpointed run instead of initializing fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

pub fn load_split(cfg: &RunConfig, args: &TrainArgs) -> Result<DatasetSplit> {
    let manifest = args.manifest.as_ref().or(cfg.dataset.manifest.as_ref());
    let market = args.market_dir.as_ref().or(cfg.dataset.market_dir.as_ref());
    let split = match (manifest, market) {
        (Some(m), _) => parse_manifest(m)?,
        (None, Some(d)) => scan_market_directory(d)?,
        (None, None) => bail!(greyfuse_core::Error::Config(
            "no dataset: pass --manifest/--market-dir or set dataset.manifest".into()
        )),
    };
    for w in &split.warnings {
        log::warn!("{w}");
    }
    Ok(split)
}

pub fn run_train(cfg: &RunConfig, args: &TrainArgs) -> Result<()> {
    let split = load_split(cfg, args)?;
    let out = cfg.out_dir()?;
    cfg.echo_into(out)?;

    let summary = match &args.resume {
        Some(ck) => trainer::resume(ck, &cfg.train, &split, out)?,
        None => trainer::train(&cfg.network, &cfg.train, &split, out)?,
    };
    let last = summary
        .loss_history
        .last()
        .map(|&(_, _, t)| t)
        .unwrap_or(f64::NAN);
    println!(
        "trained {} epochs ({} identities); final total loss {:.4}",
        summary.epochs_run,
        split.class_index.num_classes(),
        last
    );
    println!("checkpoint: {}", summary.final_checkpoint.display());
    println!("log: {}", summary.log_path.display());
    Ok(())
}
