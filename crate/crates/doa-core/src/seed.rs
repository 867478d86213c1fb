//! Deterministic seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha stream whose seed is
//! derived from (master seed, domain, index). Streams therefore never
//! overlap between observations, model init, epoch shuffles, or sweep cells,
//! and results are bit-reproducible across platforms and thread counts.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Draw domains; each gets an independent stream family.
#[derive(Debug, Clone, Copy)]
pub enum Domain {
    Grid = 1,
    SplitPermutation = 2,
    Envelope = 3,
    Noise = 4,
    WeightInit = 5,
    EpochShuffle = 6,
    SweepCell = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent 64-bit seed from (master, domain, index).
pub fn derive_seed(master: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ (domain as u64)) ^ index)
}

/// ChaCha stream for (master, domain, index).
pub fn stream_rng(master: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, domain, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(7, Domain::Grid, 0);
        let b = derive_seed(7, Domain::Grid, 0);
        assert_eq!(a, b);
        assert_ne!(a, derive_seed(7, Domain::Noise, 0));
        assert_ne!(a, derive_seed(7, Domain::Grid, 1));
        assert_ne!(a, derive_seed(8, Domain::Grid, 0));
    }
}
