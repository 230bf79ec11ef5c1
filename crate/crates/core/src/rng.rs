//! Seed plumbing. Every random draw in the crate goes through a ChaCha8
//! stream seeded from a 64-bit value, and sub-seeds are derived with a
//! splitmix64 finalizer so independent streams never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// splitmix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a sequence of integer tags.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(mix64(seed), |acc, &t| mix64(acc ^ mix64(t)))
}
