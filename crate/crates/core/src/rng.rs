//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] keyed by a
//! 64-bit base seed and a path of integer labels. The key is the SHA-256
//! digest of the little-endian encoding of `seed` followed by each label, so
//! two different paths give statistically independent streams. Parallel
//! workers derive their own stream from `(seed, ..., chunk_index)` with a
//! fixed chunk size, which keeps results identical for any worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Stream labels used by the synthesis and benchmark code.
pub mod label {
    pub const SCENARIOS: u64 = 1;
    pub const VALIDATION: u64 = 2;
    pub const EVALUATION: u64 = 3;
    pub const LAW: u64 = 4;
    pub const ROLLOUTS: u64 = 5;
    pub const PLANT_EVAL: u64 = 6;
    pub const ROBUST_BASELINE: u64 = 7;
    pub const SYNTHESIS: u64 = 8;
}

/// Draws per parallel chunk when sampling in parallel.
pub const CHUNK: usize = 4096;

pub fn derive_seed(seed: u64, path: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in path {
        h.update(p.to_le_bytes());
    }
    h.finalize().into()
}

pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::from_seed(derive_seed(seed, path))
}

/// A 64-bit child seed, for records that need to store a plain integer.
pub fn child_seed(seed: u64, path: &[u64]) -> u64 {
    let d = derive_seed(seed, path);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
