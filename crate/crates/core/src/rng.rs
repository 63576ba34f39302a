//! Deterministic RNG streams.
//!
//! Every random draw in the simulator comes from a `ChaCha8Rng` whose seed is
//! derived from the run's master seed plus a purpose tag, so independently
//! seeded subsystems (dataset generation, weight init, partition shuffles)
//! never share or perturb each other's streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives a child seed from `master` for the given purpose tag and index.
///
/// The mix is a fixed splitmix64-style hash; equal inputs always produce the
/// same child seed on every platform.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = master ^ 0x9e37_79b9_7f4a_7c15;
    for &b in tag.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ index)
}

/// A seeded stream for the given purpose.
pub fn stream(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
