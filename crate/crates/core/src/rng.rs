//! Seeded random streams.
//!
//! Every random decision in the crate flows from a `(seed, stream)` pair so
//! that results never depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream identifiers for the independent consumers of a base seed.
pub mod streams {
    pub const TRAIN_TEST: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const LOCAL_SPLIT: u64 = 3;
    pub const QUOTAS: u64 = 4;
    pub const SELECTION: u64 = 5;
    pub const SYNTHETIC: u64 = 6;
    pub const FOREST: u64 = 7;
}

/// Deterministic generator for `seed` on a given `stream`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a seed with an index into a new seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
