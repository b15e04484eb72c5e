//! Seed derivation. Every random stream is keyed off the run's global seed
//! plus stable labels, so parallel work never shares RNG state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Stable 64-bit seed from a global seed and a list of labels.
pub fn derive_seed(global: u64, labels: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    for l in labels {
        h.update((l.len() as u64).to_le_bytes());
        h.update(l.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn rng_for(global: u64, labels: &[&str]) -> Rng {
    Rng::seed_from_u64(derive_seed(global, labels))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
