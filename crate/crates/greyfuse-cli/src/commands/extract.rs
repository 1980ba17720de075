use anyhow::{bail, Result};
use clap::Args;
use greyfuse_core::dataset::parse_manifest;
use greyfuse_core::eval::write_features;
use greyfuse_core::model::{branch_submatrix, Branch};
use greyfuse_core::trainer::network_from_checkpoint;
use std::path::PathBuf;

use crate::config::RunConfig;

/// Extract features for one split into a binary feature file + sidecar.
#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Which split of the manifest to embed.
    #[arg(long, value_parser = ["train", "query", "gallery"])]
    pub split: String,
    /// Sub-feature to store: grey (256), rgb (512), joint (512) or the
    /// full concatenation.
    #[arg(long, default_value = "global")]
    pub branch: String,
    /// Feature file to write (sidecar lands at <output>.meta).
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
}

pub fn run_extract(cfg: &RunConfig, args: &ExtractArgs) -> Result<()> {
    let branch: Branch = args.branch.parse::<Branch>()?;
    let split = parse_manifest(&args.manifest)?;
    let records = match args.split.as_str() {
        "train" => &split.train,
        "query" => &split.query,
        "gallery" => &split.gallery,
        other => bail!(greyfuse_core::Error::InvalidArgument(format!(
            "unknown split {other:?}"
        ))),
    };
    if records.is_empty() {
        bail!(greyfuse_core::Error::Config(format!(
            "split {:?} of {} is empty",
            args.split,
            args.manifest.display()
        )));
    }

    let mut net = network_from_checkpoint(&args.checkpoint)?;
    let features = net.extract_features(records, &cfg.dataset.augment, args.batch_size)?;
    let selected = branch_submatrix(&features.view(), &net.cfg, &[branch])?;
    write_features(&args.output, selected.view(), records, &args.split)?;
    println!(
        "wrote {}x{} {} features to {}",
        selected.nrows(),
        selected.ncols(),
        branch.name(),
        args.output.display()
    );
    Ok(())
}
