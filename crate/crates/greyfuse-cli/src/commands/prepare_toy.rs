use anyhow::{Context, Result};
use clap::Args;
use greyfuse_core::dataset::generate_toy_dataset;

use crate::config::RunConfig;

/// Render the synthetic dataset and write its manifest.
#[derive(Debug, Args)]
pub struct PrepareToyArgs {
    /// Total identities (train + evaluation).
    #[arg(long)]
    pub ids: Option<usize>,
    /// Images per identity.
    #[arg(long = "per-id")]
    pub per_id: Option<usize>,
    /// Number of cameras (at least 2).
    #[arg(long)]
    pub cams: Option<usize>,
    /// Train identities (default: half of --ids).
    #[arg(long = "train-ids")]
    pub train_ids: Option<usize>,
    /// Give identity pairs matching clothing colors (texture stays
    /// discriminative).
    #[arg(long)]
    pub confound: Option<bool>,
    /// Rendered image height.
    #[arg(long)]
    pub height: Option<usize>,
    /// Rendered image width.
    #[arg(long)]
    pub width: Option<usize>,
}

pub fn run_prepare_toy(cfg: &RunConfig, args: &PrepareToyArgs) -> Result<()> {
    let mut toy = cfg.dataset.toy;
    if let Some(v) = args.ids {
        toy.num_ids = v;
    }
    if let Some(v) = args.per_id {
        toy.images_per_id = v;
    }
    if let Some(v) = args.cams {
        toy.num_cams = v;
    }
    if let Some(v) = args.train_ids {
        toy.train_ids = v;
    }
    if let Some(v) = args.confound {
        toy.color_confound = v;
    }
    if let Some(v) = args.height {
        toy.height = v;
    }
    if let Some(v) = args.width {
        toy.width = v;
    }

    let out = cfg.out_dir()?;
    let split = generate_toy_dataset(&toy, out, cfg.seed)?;
    for w in &split.warnings {
        log::warn!("{w}");
    }

    // Echo the generation spec next to the data.
    #[derive(serde::Serialize)]
    struct Echo<'a> {
        seed: u64,
        toy: &'a greyfuse_core::dataset::ToyConfig,
    }
    let echo = toml::to_string_pretty(&Echo {
        seed: cfg.seed,
        toy: &toy,
    })
    .context("serializing generation spec")?;
    std::fs::write(out.join("toy.toml"), echo)
        .with_context(|| format!("writing {}", out.join("toy.toml").display()))?;

    println!(
        "wrote {} train / {} query / {} gallery images under {}",
        split.train.len(),
        split.query.len(),
        split.gallery.len(),
        out.display()
    );
    println!("manifest: {}", out.join("manifest.csv").display());
    Ok(())
}
