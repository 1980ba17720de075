//! Deterministic, platform-independent random streams.
//!
//! Every source of randomness in the crate is a [`ChaCha8Rng`] derived from a
//! root seed plus a textual tag and integer indices. Streams are independent
//! of each other and of iteration order, which makes the batch sequence a
//! pure function of `(seed, epoch)` regardless of how work is scheduled.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive an independent stream from `(root, tag, indices)`.
pub fn stream(root: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update([0xff]);
    hasher.update(tag.as_bytes());
    for ix in indices {
        hasher.update([0xfe]);
        hasher.update(ix.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}
