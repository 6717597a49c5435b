//! Seed derivation for reproducible runs.
//!
//! Every random decision in a run is drawn from a `ChaCha8Rng` seeded by
//! hashing a master seed together with a purpose tag, so adding or reordering
//! consumers of randomness in one phase never perturbs another phase.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a sub-seed from a master seed and a purpose tag.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// A deterministic RNG for the given master seed and purpose tag.
pub fn rng_for(master: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable_and_tag_sensitive() {
        assert_eq!(derive_seed(7, "teacher"), derive_seed(7, "teacher"));
        assert_ne!(derive_seed(7, "teacher"), derive_seed(7, "transfer"));
        assert_ne!(derive_seed(7, "teacher"), derive_seed(8, "teacher"));
    }

    #[test]
    fn rngs_with_same_derivation_agree() {
        let mut a = rng_for(42, "epoch_3");
        let mut b = rng_for(42, "epoch_3");
        for _ in 0..16 {
            assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        }
    }
}
