//! Dataset ingestion, conversion, augmentation and batch sampling.

mod augment;
mod grey;
mod manifest;
mod market;
mod sampler;
mod toy;

pub use augment::{AugTrace, AugmentConfig, EraseConfig, EraseRect, TensorPair};
pub use grey::{grey_pixel, to_greyscale, GreyWeights};
pub use manifest::{parse_manifest, write_manifest};
pub use market::{parse_market_filename, scan_market_directory};
pub use sampler::{assemble_batch, sample_pk_batches, BatchPlan, PKBatch};
pub use toy::{generate_toy_dataset, id_histograms, ToyConfig};

use image::RgbImage;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One person image with identity and camera labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub image_path: PathBuf,
    /// Negative values mark junk detections.
    pub person_id: i64,
    pub camera_id: u32,
}

impl ImageRecord {
    pub fn is_junk(&self) -> bool {
        self.person_id < 0
    }
}

/// Bijection between train person ids and dense class indices 0..C-1, in
/// first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassIndex {
    pids: Vec<i64>,
    classes: HashMap<i64, usize>,
}

impl ClassIndex {
    pub fn from_train(records: &[ImageRecord]) -> Self {
        let mut index = ClassIndex::default();
        for r in records {
            if !index.classes.contains_key(&r.person_id) {
                index.classes.insert(r.person_id, index.pids.len());
                index.pids.push(r.person_id);
            }
        }
        index
    }

    pub fn num_classes(&self) -> usize {
        self.pids.len()
    }

    pub fn class_of(&self, person_id: i64) -> Option<usize> {
        self.classes.get(&person_id).copied()
    }

    pub fn pid_of(&self, class: usize) -> Option<i64> {
        self.pids.get(class).copied()
    }
}

/// Train/query/gallery records plus the dense class index over train.
#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<ImageRecord>,
    pub query: Vec<ImageRecord>,
    pub gallery: Vec<ImageRecord>,
    pub class_index: ClassIndex,
    pub warnings: Vec<String>,
}

impl DatasetSplit {
    /// Assemble a split: builds the class index and records a warning for
    /// every query identity that has no cross-camera gallery image.
    pub fn from_parts(
        train: Vec<ImageRecord>,
        query: Vec<ImageRecord>,
        gallery: Vec<ImageRecord>,
    ) -> Self {
        let class_index = ClassIndex::from_train(&train);
        let mut warnings = Vec::new();
        for q in &query {
            let ok = gallery
                .iter()
                .any(|g| g.person_id == q.person_id && g.camera_id != q.camera_id);
            if !ok {
                warnings.push(format!(
                    "query id {} (camera {}) has no cross-camera gallery match",
                    q.person_id, q.camera_id
                ));
            }
        }
        DatasetSplit {
            train,
            query,
            gallery,
            class_index,
            warnings,
        }
    }
}

/// Decode a 3-channel 8-bit image from disk.
pub fn load_rgb_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    match img {
        image::DynamicImage::ImageRgb8(rgb) => Ok(rgb),
        other => Err(Error::Image {
            path: path.to_path_buf(),
            message: format!(
                "expected a 3-channel 8-bit image, found {:?}",
                other.color()
            ),
        }),
    }
}

/// In-memory image cache keyed by path; the trainer preloads the train
/// split once instead of re-decoding PNGs every epoch.
#[derive(Debug, Default)]
pub struct ImageStore {
    images: HashMap<PathBuf, RgbImage>,
}

impl ImageStore {
    pub fn preload(records: &[ImageRecord]) -> Result<Self> {
        let mut images = HashMap::new();
        for r in records {
            if !images.contains_key(&r.image_path) {
                images.insert(r.image_path.clone(), load_rgb_image(&r.image_path)?);
            }
        }
        Ok(ImageStore { images })
    }

    pub fn get(&self, path: &Path) -> Option<&RgbImage> {
        self.images.get(path)
    }
}
