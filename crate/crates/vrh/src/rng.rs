//! Splittable, counter-based random number streams.
//!
//! Every stochastic routine in the crate draws from a `ChaCha8Rng` whose
//! seed is derived from a master seed plus a list of integer tags (purpose,
//! sample index, trajectory index, ...). Streams for distinct tag lists are
//! independent for all practical purposes, so parallel fan-out over samples
//! never shares generator state and results are bit-identical regardless of
//! thread count or evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Weyl increment from the SplitMix64 generator.
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: bijective avalanche mix of a 64-bit word.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a tag path.
///
/// Each tag absorbs one SplitMix64 round, so (master, tags) -> seed is
/// deterministic and order-sensitive: `[a, b]` and `[b, a]` give unrelated
/// seeds.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut z = mix(master.wrapping_add(GOLDEN_GAMMA));
    for &t in tags {
        z = mix(z ^ mix(t.wrapping_add(GOLDEN_GAMMA)));
    }
    z
}

/// Independent generator for the given tag path under a master seed.
pub fn stream(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}

/// Purpose tags for the first component of a stream's tag path.
///
/// Keeping them in one place guarantees two different experiments never
/// reuse a stream by accident.
pub mod purpose {
    pub const POSITIONS: u64 = 1;
    pub const MARKS: u64 = 2;
    pub const PALM: u64 = 3;
    pub const WALK: u64 = 4;
    pub const NETWORK: u64 = 5;
    pub const FIELD: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
    pub const THRESHOLD: u64 = 8;
    pub const PROBE: u64 = 9;
}
