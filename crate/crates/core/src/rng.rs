//! Seeding.
//!
//! Every random draw goes through [`ChaCha8Rng`], a counter-based generator
//! whose output stream is fixed across platforms. Independent streams for
//! different purposes are derived by hashing `(seed, purpose)` with SHA-256,
//! so adding a new consumer never shifts the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive a child seed from a parent seed and a purpose label.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(purpose.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn sub_rng(seed: u64, purpose: &str) -> Rng {
    rng(derive_seed(seed, purpose))
}
