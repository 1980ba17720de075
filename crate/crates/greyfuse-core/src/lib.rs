//! Two-stream RGB/grey person re-identification.
//!
//! The crate is organized around the life cycle of a retrieval experiment:
//!
//! - [`dataset`]: manifest/directory ingestion, RGB→grey conversion, paired
//!   augmentation, PK batch sampling and a deterministic synthetic dataset
//!   generator for desk-scale runs.
//! - [`nn`]: a small deterministic CPU tensor engine (forward + reverse-mode
//!   gradients) that the network and trainer are built on. Single-threaded
//!   with a fixed reduction order, so identical inputs give bitwise identical
//!   results.
//! - [`model`]: the two-stream network — independent RGB and grey backbones,
//!   elementwise tensor fusion into a joint branch, horizontal part split,
//!   GAP and per-branch embedding/classifier heads.
//! - [`losses`]: cross-entropy, batch-hard triplet and their per-branch
//!   combination into the training objective.
//! - [`trainer`]: SGD training loop with a piecewise-constant learning-rate
//!   schedule, structured loss logging and resumable checkpoints.
//! - [`eval`]: single-query CMC/mAP retrieval evaluation with cross-camera
//!   filtering, plus the binary feature-file format.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod nn;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
