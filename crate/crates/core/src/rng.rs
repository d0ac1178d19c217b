//! Seed derivation and counter-based random streams.
//!
//! All randomness in the library flows through seeds derived here; there is
//! no ambient RNG. Stage seeds are derived by keyed hashing of the master
//! seed and a stage name, and fine-grained streams (dropout masks, batch
//! sampling, per-example decode noise) are keyed by small integer counters,
//! so any point of a run can be replayed exactly.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a stage seed from a master seed and a stage name.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// splitmix64 finalizer; cheap integer mixing for counter keys.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine a seed with counters into a single stream key.
pub fn key(seed: u64, counters: &[u64]) -> u64 {
    let mut acc = mix(seed);
    for &c in counters {
        acc = mix(acc ^ c);
    }
    acc
}

/// A deterministic RNG for the given seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A deterministic RNG keyed by (seed, counters), e.g. (run, step, site).
pub fn keyed_rng(seed: u64, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key(seed, counters))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_stable_and_stage_sensitive() {
        assert_eq!(derive_seed(7, "world"), derive_seed(7, "world"));
        assert_ne!(derive_seed(7, "world"), derive_seed(7, "lm"));
        assert_ne!(derive_seed(7, "world"), derive_seed(8, "world"));
    }

    #[test]
    fn keyed_streams_differ_by_counter() {
        use rand::RngCore;
        let a = keyed_rng(1, &[0, 5]).next_u64();
        let b = keyed_rng(1, &[0, 6]).next_u64();
        let a2 = keyed_rng(1, &[0, 5]).next_u64();
        assert_eq!(a, a2);
        assert_ne!(a, b);
    }
}
