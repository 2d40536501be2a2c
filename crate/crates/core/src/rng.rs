//! Seeded RNG streams.
//!
//! Every randomized operation takes an explicit `u64` seed and runs a
//! ChaCha stream derived from it, so results are reproducible across
//! platforms and thread counts. Stage- or task-specific streams are
//! derived by hashing the parent seed with a label; adding a new labeled
//! stream never perturbs existing ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from a parent seed and a stream label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Deterministic RNG for the given seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(42, "mastery");
        let b = derive_seed(42, "embed");
        assert_eq!(a, derive_seed(42, "mastery"));
        assert_ne!(a, b);
        assert_ne!(a, derive_seed(43, "mastery"));
    }

    #[test]
    fn rng_streams_reproduce() {
        let mut r1 = rng_from_seed(7);
        let mut r2 = rng_from_seed(7);
        let xs: Vec<u64> = (0..8).map(|_| r1.random()).collect();
        let ys: Vec<u64> = (0..8).map(|_| r2.random()).collect();
        assert_eq!(xs, ys);
    }
}
