//! Joint end-to-end training of all branches.
//!
//! One trainer thread drives the loop: plan PK batches for the epoch,
//! assemble tensors, forward, total loss, backward, SGD step at the
//! scheduled learning rate. Loss reports stream to `train_log.csv` in the
//! run directory (`epoch,step,head,ce,triplet,total`), checkpoints land in
//! `checkpoints/`, and the batch sequence is a pure function of
//! `(seed, epoch)`, so a resumed run replays exactly what an uninterrupted
//! one would have seen.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::dataset::{assemble_batch, sample_pk_batches, AugmentConfig, DatasetSplit, ImageStore};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossConfig};
use crate::model::{NetworkConfig, TwoStreamNet};
use crate::nn::Sgd;
use crate::rng;

/// Piecewise-constant learning-rate schedule: `(start_epoch, lr)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LrSchedule(pub Vec<(usize, f64)>);

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule(vec![(0, 0.01), (100, 0.001), (200, 0.0001)])
    }
}

impl LrSchedule {
    pub fn validate(&self, total_epochs: usize) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Config("lr schedule is empty".into()));
        }
        if self.0[0].0 != 0 {
            return Err(Error::Config("lr schedule must start at epoch 0".into()));
        }
        for w in self.0.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Config(
                    "lr schedule breakpoints must be strictly increasing".into(),
                ));
            }
        }
        if self.0.last().unwrap().0 >= total_epochs {
            return Err(Error::Config(format!(
                "lr schedule breakpoint {} is not below total epochs {}",
                self.0.last().unwrap().0,
                total_epochs
            )));
        }
        if self.0.iter().any(|&(_, lr)| !(lr.is_finite() && lr > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Piecewise-constant lookup.
pub fn lr_at(epoch: usize, schedule: &LrSchedule, total_epochs: usize) -> Result<f64> {
    if epoch >= total_epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} out of range (total {total_epochs})"
        )));
    }
    let mut lr = schedule.0[0].1;
    for &(start, value) in &schedule.0 {
        if epoch >= start {
            lr = value;
        }
    }
    Ok(lr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Identities per batch.
    pub p: usize,
    /// Images per identity.
    pub k: usize,
    /// Save an intermediate checkpoint every this many epochs (0 = final only).
    pub checkpoint_every: usize,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    /// Warm-start parameter values (same architecture) without optimizer
    /// state; fresh epoch counter.
    pub init_from: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            lr_schedule: LrSchedule::default(),
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            p: 32,
            k: 4,
            checkpoint_every: 0,
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            init_from: None,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset used by the synthetic dataset runs.
    pub fn toy(seed: u64) -> Self {
        TrainConfig {
            epochs: 40,
            lr_schedule: LrSchedule(vec![(0, 0.01), (30, 0.001)]),
            seed,
            p: 4,
            k: 4,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        self.lr_schedule.validate(self.epochs)?;
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        self.loss.validate()?;
        self.augment.validate()?;
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        lr_at(epoch, &self.lr_schedule, self.epochs)
    }
}

#[derive(Debug)]
pub struct TrainSummary {
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
    /// `(epoch, global_step, total)` per step.
    pub loss_history: Vec<(usize, usize, f64)>,
    pub param_checksum: String,
    pub epochs_run: usize,
}

/// Train from a fresh initialization (or a warm start when
/// `cfg.init_from` is set).
pub fn train(
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    split: &DatasetSplit,
    out_dir: &Path,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let resolved = resolve_classes(net_cfg, split)?;
    let mut net = TwoStreamNet::new(resolved, cfg.seed)?;
    if let Some(init) = &cfg.init_from {
        let ck = load_checkpoint(init)?;
        ck.check_config(init, &net.cfg)?;
        ck.apply(init, &mut net.store)?;
        // Warm start only: momentum restarts from zero.
        for p in net.store.iter_mut() {
            p.momentum.fill(0.0);
        }
    }
    run(net, 0, 0, cfg, split, out_dir, false)
}

/// Resume a checkpointed run: restores parameters, optimizer state and the
/// epoch counter; subsequent batches equal an uninterrupted run with the
/// same seed.
pub fn resume(
    checkpoint_path: &Path,
    cfg: &TrainConfig,
    split: &DatasetSplit,
    out_dir: &Path,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let ck = load_checkpoint(checkpoint_path)?;
    if ck.seed != cfg.seed {
        return Err(Error::CheckpointConfig {
            path: checkpoint_path.to_path_buf(),
            message: format!(
                "checkpoint seed {} differs from configured seed {}; resuming would \
                 change the batch sequence",
                ck.seed, cfg.seed
            ),
        });
    }
    let resolved = resolve_classes(&ck.network, split)?;
    ck.check_config(checkpoint_path, &resolved)?;
    let mut net = TwoStreamNet::new(resolved, cfg.seed)?;
    ck.apply(checkpoint_path, &mut net.store)?;
    run(net, ck.epoch, ck.global_step, cfg, split, out_dir, true)
}

fn resolve_classes(net_cfg: &NetworkConfig, split: &DatasetSplit) -> Result<NetworkConfig> {
    let c = split.class_index.num_classes();
    if split.train.is_empty() || c == 0 {
        return Err(Error::Config("train split is empty".into()));
    }
    let mut resolved = net_cfg.clone();
    if resolved.num_classes == 0 {
        resolved.num_classes = c;
    } else if resolved.num_classes != c {
        return Err(Error::Config(format!(
            "network.num_classes = {} but the train split holds {} identities",
            resolved.num_classes, c
        )));
    }
    resolved.validate()?;
    Ok(resolved)
}

fn run(
    mut net: TwoStreamNet,
    start_epoch: usize,
    mut global_step: usize,
    cfg: &TrainConfig,
    split: &DatasetSplit,
    out_dir: &Path,
    append_log: bool,
) -> Result<TrainSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let images = ImageStore::preload(&split.train)?;
    let optimizer = Sgd::new(cfg.momentum as f32, cfg.weight_decay as f32);

    let log_path = out_dir.join("train_log.csv");
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(append_log)
        .write(true)
        .truncate(!append_log)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    if !append_log {
        writeln!(log, "epoch,step,head,ce,triplet,total").map_err(|e| Error::io(&log_path, e))?;
    }

    let mut history = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        let lr = cfg.lr_at(epoch)?;
        let mut epoch_rng = rng::stream(cfg.seed, "epoch", &[epoch as u64]);
        let plans = sample_pk_batches(
            &split.train,
            &split.class_index,
            cfg.p,
            cfg.k,
            &mut epoch_rng,
        )?;
        for (bi, plan) in plans.iter().enumerate() {
            let batch = assemble_batch(
                plan,
                &split.train,
                &images,
                &cfg.augment,
                cfg.seed,
                epoch,
                bi,
            )?;
            let batch_ids = || -> Vec<String> {
                batch.paths.iter().map(|p| p.display().to_string()).collect()
            };
            let (mut tape, heads) = net.forward_batch(&batch, true)?;
            // Numeric blowups surface either as a non-finite total or as a
            // loss-input validation error; both abort with the offending
            // batch identifiers.
            let (total_node, report) =
                match total_loss(&mut tape, &heads, &batch.labels, &cfg.loss) {
                    Ok(v) => v,
                    Err(Error::Loss(m)) if m.contains("non-finite") => {
                        return Err(Error::NonFiniteLoss {
                            epoch,
                            step: global_step,
                            batch: batch_ids(),
                        })
                    }
                    Err(e) => return Err(e),
                };
            if !report.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: global_step,
                    batch: batch_ids(),
                });
            }
            net.store.zero_grads();
            tape.backward(total_node, &mut net.store);
            optimizer.step(&mut net.store, lr as f32);

            for line in report.log_lines(epoch, global_step, &cfg.loss) {
                writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
            }
            history.push((epoch, global_step, report.total));
            global_step += 1;
        }
        log.flush().map_err(|e| Error::io(&log_path, e))?;

        let completed = epoch + 1;
        if cfg.checkpoint_every > 0 && completed % cfg.checkpoint_every == 0 && completed < cfg.epochs
        {
            let path = out_dir
                .join("checkpoints")
                .join(format!("epoch_{completed:04}.grck"));
            save_checkpoint(&path, &net.cfg, &net.store, completed, global_step, cfg.seed)?;
        }
    }

    let final_checkpoint = out_dir.join("final.grck");
    save_checkpoint(
        &final_checkpoint,
        &net.cfg,
        &net.store,
        cfg.epochs,
        global_step,
        cfg.seed,
    )?;
    Ok(TrainSummary {
        final_checkpoint,
        log_path,
        loss_history: history,
        param_checksum: net.store.checksum(),
        epochs_run: cfg.epochs - start_epoch,
    })
}

/// Rebuild a network from a checkpoint (for feature extraction and
/// evaluation).
pub fn network_from_checkpoint(path: &Path) -> Result<TwoStreamNet> {
    let ck = load_checkpoint(path)?;
    let mut net = TwoStreamNet::new(ck.network.clone(), ck.seed)?;
    ck.apply(path, &mut net.store)?;
    Ok(net)
}
