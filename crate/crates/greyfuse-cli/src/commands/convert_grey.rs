use anyhow::Result;
use clap::Args;
use greyfuse_core::dataset::{load_rgb_image, to_greyscale, GreyWeights};
use std::path::PathBuf;

use crate::config::RunConfig;

/// Standalone RGB -> grey conversion (pipeline debugging aid).
#[derive(Debug, Args)]
pub struct ConvertGreyArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// rec601 (0.299/0.587/0.114) or average (1/3 each); defaults to the
    /// configured augmentation weights.
    #[arg(long)]
    pub weights: Option<String>,
}

pub fn run_convert_grey(cfg: &RunConfig, args: &ConvertGreyArgs) -> Result<()> {
    let weights = match args.weights.as_deref() {
        None => cfg.dataset.augment.grey,
        Some("rec601") => GreyWeights::Rec601,
        Some("average") => GreyWeights::Average,
        Some(other) => anyhow::bail!(greyfuse_core::Error::InvalidArgument(format!(
            "unknown weights {other:?} (expected rec601|average)"
        ))),
    };
    let img = load_rgb_image(&args.input)?;
    let grey = to_greyscale(&img, weights);
    grey.save(&args.output).map_err(|e| {
        greyfuse_core::Error::Image {
            path: args.output.clone(),
            message: e.to_string(),
        }
    })?;
    println!("wrote {}", args.output.display());
    Ok(())
}
