//! Run configuration: one TOML file plus dotted-key overrides.
//!
//! Sections: `[dataset]` (manifest/market_dir, `[dataset.augment]`,
//! `[dataset.toy]`), `[network]`, `[loss]`, `[train]`, `[eval]`, and
//! top-level `seed` / `out_dir`. The `[loss]`, `[dataset.augment]` sections
//! and the top-level seed are authoritative: they are copied into the
//! train section when the config is resolved. The fully resolved config is
//! echoed into the run directory so any output is reproducible from the
//! directory alone plus the dataset.

use anyhow::{bail, Context, Result};
use greyfuse_core::dataset::{AugmentConfig, ToyConfig};
use greyfuse_core::eval::EvalProtocol;
use greyfuse_core::losses::LossConfig;
use greyfuse_core::model::NetworkConfig;
use greyfuse_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DatasetSection {
    /// Manifest file (`split,image_path,person_id,camera_id` lines).
    pub manifest: Option<PathBuf>,
    /// Market1501-style directory (bounding_box_train/query/bounding_box_test).
    pub market_dir: Option<PathBuf>,
    pub augment: AugmentConfig,
    pub toy: ToyConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetSection,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalProtocol,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: None,
            dataset: DatasetSection::default(),
            network: NetworkConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            eval: EvalProtocol::default(),
        }
    }
}

impl RunConfig {
    /// Load from an optional file, apply `--set key=value` overrides, then
    /// the `--seed`/`--out` shorthands, and resolve cross-section copies.
    pub fn load(
        config_path: Option<&Path>,
        sets: &[String],
        seed: Option<u64>,
        out: Option<&Path>,
    ) -> Result<Self> {
        let mut value: toml::Value = match config_path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                text.parse()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Value::Table(Default::default()),
        };
        for kv in sets {
            apply_set(&mut value, kv)?;
        }
        let mut cfg: RunConfig = value
            .try_into()
            .context("interpreting configuration values")?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(o) = out {
            cfg.out_dir = Some(o.to_path_buf());
        }
        cfg.resolve();
        Ok(cfg)
    }

    /// Copy the authoritative sections into the nested train config.
    fn resolve(&mut self) {
        self.train.seed = self.seed;
        self.train.loss = self.loss.clone();
        self.train.augment = self.dataset.augment;
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("no output directory (use --out or set out_dir)"))
    }

    /// Serialize the resolved config into the run directory.
    pub fn echo_into(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating run directory {}", dir.display()))?;
        let path = dir.join("config.toml");
        let text = toml::to_string_pretty(self).context("serializing resolved config")?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Apply one `key.path=value` override onto the TOML tree. Values parse as
/// TOML literals where possible and fall back to strings.
fn apply_set(root: &mut toml::Value, kv: &str) -> Result<()> {
    let Some((key, raw)) = kv.split_once('=') else {
        bail!("--set expects key=value, got {kv:?}");
    };
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .with_context(|| format!("--set {key}: {part} is not a table"))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!("loop returns on the last component")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = text.parse::<toml::Value>().unwrap().try_into().unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn set_overrides_reach_nested_fields() {
        let cfg = RunConfig::load(
            None,
            &[
                "loss.lambda=0.5".to_string(),
                "network.backbone=\"toy-cnn\"".to_string(),
                "train.epochs=7".to_string(),
                "dataset.augment.height=96".to_string(),
            ],
            Some(11),
            None,
        )
        .unwrap();
        assert_eq!(cfg.loss.lambda, 0.5);
        assert_eq!(cfg.train.loss.lambda, 0.5, "loss section is authoritative");
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.seed, 11);
        assert_eq!(cfg.train.augment.height, 96);
        assert_eq!(
            cfg.network.backbone,
            greyfuse_core::model::BackboneKind::ToyCnn
        );
    }

    #[test]
    fn bad_set_syntax_is_rejected() {
        assert!(RunConfig::load(None, &["nonsense".to_string()], None, None).is_err());
        assert!(RunConfig::load(None, &["train.epochs=\"x\"".to_string()], None, None).is_err());
    }
}
