//! PK batch sampling: P identities x K images per batch.
//!
//! Each epoch shuffles the identity list and walks it in chunks of P, so
//! every train identity appears in at least one batch per epoch. A short
//! tail chunk is topped up with distinct identities drawn from the rest;
//! identities holding fewer than K images are completed by sampling with
//! replacement. Batch plans are a pure function of the rng handed in, and
//! tensor assembly derives one augmentation stream per item from
//! `(seed, epoch, batch, item)` — prefetch workers cannot change results.

use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

use super::{AugmentConfig, ClassIndex, ImageRecord, ImageStore};
use crate::error::{Error, Result};
use crate::rng;

/// Index-level plan of one batch: `(train record index, dense label)`,
/// grouped identity-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub items: Vec<(usize, usize)>,
    pub p: usize,
    pub k: usize,
}

/// Plan one epoch of PK batches over the train records.
pub fn sample_pk_batches(
    train: &[ImageRecord],
    class_index: &ClassIndex,
    p: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BatchPlan>> {
    let c = class_index.num_classes();
    if p < 2 || k < 2 {
        return Err(Error::Config(format!(
            "PK sampling needs P >= 2 and K >= 2, got P={p} K={k}"
        )));
    }
    if c < p {
        return Err(Error::Config(format!(
            "PK sampling needs at least P={p} identities, train has {c}"
        )));
    }

    // Record indices per dense label.
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, r) in train.iter().enumerate() {
        let label = class_index
            .class_of(r.person_id)
            .expect("train record covered by class index");
        per_class[label].push(i);
    }

    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(rng);

    let mut batches = Vec::new();
    for chunk_start in (0..c).step_by(p) {
        let mut chunk: Vec<usize> = order[chunk_start..(chunk_start + p).min(c)].to_vec();
        if chunk.len() < p {
            // Top up the tail with distinct identities from the rest.
            let mut pool: Vec<usize> = (0..c).filter(|l| !chunk.contains(l)).collect();
            pool.shuffle(rng);
            chunk.extend(pool.into_iter().take(p - chunk.len()));
        }
        let mut items = Vec::with_capacity(p * k);
        for &label in &chunk {
            let candidates = &per_class[label];
            let mut picks: Vec<usize> = candidates.clone();
            picks.shuffle(rng);
            picks.truncate(k);
            while picks.len() < k {
                picks.push(candidates[rng.gen_range(0..candidates.len())]);
            }
            items.extend(picks.into_iter().map(|i| (i, label)));
        }
        batches.push(BatchPlan { items, p, k });
    }
    Ok(batches)
}

/// A training batch: paired RGB/grey tensors (N,3,H,W), dense labels, and
/// the source image paths (kept for diagnostics).
#[derive(Debug, Clone)]
pub struct PKBatch {
    pub rgb: Array4<f32>,
    pub grey: Array4<f32>,
    pub labels: Vec<usize>,
    pub paths: Vec<PathBuf>,
}

impl PKBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Materialize a batch plan into tensors. Augmentation streams are derived
/// from `(seed, epoch, batch_index, item)`.
pub fn assemble_batch(
    plan: &BatchPlan,
    train: &[ImageRecord],
    images: &ImageStore,
    aug: &AugmentConfig,
    seed: u64,
    epoch: usize,
    batch_index: usize,
) -> Result<PKBatch> {
    let n = plan.items.len();
    let mut rgb = Array4::<f32>::zeros((n, 3, aug.height, aug.width));
    let mut grey = rgb.clone();
    let mut labels = Vec::with_capacity(n);
    let mut paths = Vec::with_capacity(n);
    for (item, &(rec_ix, label)) in plan.items.iter().enumerate() {
        let rec = &train[rec_ix];
        let img = images.get(&rec.image_path).ok_or_else(|| Error::Image {
            path: rec.image_path.clone(),
            message: "not preloaded".into(),
        })?;
        let mut item_rng = rng::stream(
            seed,
            "augment",
            &[epoch as u64, batch_index as u64, item as u64],
        );
        let (pair, _) = aug.train_pair(img, &mut item_rng);
        rgb.index_axis_mut(ndarray::Axis(0), item).assign(&pair.rgb);
        grey.index_axis_mut(ndarray::Axis(0), item)
            .assign(&pair.grey);
        labels.push(label);
        paths.push(rec.image_path.clone());
    }
    Ok(PKBatch {
        rgb,
        grey,
        labels,
        paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    fn fake_train(counts: &[(i64, usize)]) -> Vec<ImageRecord> {
        let mut out = Vec::new();
        for &(pid, n) in counts {
            for j in 0..n {
                out.push(ImageRecord {
                    image_path: format!("{pid}_{j}.png").into(),
                    person_id: pid,
                    camera_id: (j % 2) as u32,
                });
            }
        }
        out
    }

    #[test]
    fn batches_hold_exactly_p_labels_k_times() {
        let train = fake_train(&[(1, 6), (2, 4), (3, 5), (4, 4), (5, 7)]);
        let index = ClassIndex::from_train(&train);
        let mut rng = crate::rng::stream(3, "epoch", &[0]);
        let batches = sample_pk_batches(&train, &index, 2, 3, &mut rng).unwrap();
        for b in &batches {
            assert_eq!(b.items.len(), 6);
            let mut counts: HashMap<usize, usize> = HashMap::new();
            for &(_, label) in &b.items {
                *counts.entry(label).or_default() += 1;
            }
            assert_eq!(counts.len(), 2);
            assert!(counts.values().all(|&c| c == 3));
        }
    }

    #[test]
    fn short_identities_fill_with_replacement() {
        let train = fake_train(&[(1, 2), (2, 8)]);
        let index = ClassIndex::from_train(&train);
        let mut rng = crate::rng::stream(4, "epoch", &[0]);
        let batches = sample_pk_batches(&train, &index, 2, 4, &mut rng).unwrap();
        let b = &batches[0];
        let short: Vec<usize> = b
            .items
            .iter()
            .filter(|(_, l)| *l == 0)
            .map(|(i, _)| *i)
            .collect();
        assert_eq!(short.len(), 4);
        assert!(short.iter().collect::<HashSet<_>>().len() <= 2);
    }

    #[test]
    fn every_identity_appears_each_epoch() {
        let train = fake_train(&[(1, 3), (2, 3), (3, 3), (4, 3), (5, 3), (6, 3), (7, 3)]);
        let index = ClassIndex::from_train(&train);
        for ep in 0..5u64 {
            let mut rng = crate::rng::stream(9, "epoch", &[ep]);
            let batches = sample_pk_batches(&train, &index, 3, 2, &mut rng).unwrap();
            let seen: HashSet<usize> = batches
                .iter()
                .flat_map(|b| b.items.iter().map(|&(_, l)| l))
                .collect();
            assert_eq!(seen.len(), 7, "epoch {ep} covered all identities");
        }
    }

    #[test]
    fn same_seed_same_plan() {
        let train = fake_train(&[(1, 5), (2, 5), (3, 5), (4, 5)]);
        let index = ClassIndex::from_train(&train);
        let a = sample_pk_batches(&train, &index, 2, 2, &mut crate::rng::stream(7, "e", &[1]))
            .unwrap();
        let b = sample_pk_batches(&train, &index, 2, 2, &mut crate::rng::stream(7, "e", &[1]))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_identities_is_a_config_error() {
        let train = fake_train(&[(1, 5), (2, 5)]);
        let index = ClassIndex::from_train(&train);
        let err = sample_pk_batches(&train, &index, 3, 2, &mut crate::rng::stream(1, "e", &[0]));
        assert!(err.is_err());
    }
}
