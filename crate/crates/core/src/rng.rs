//! Seeded random streams.
//!
//! Every stochastic stage draws from a `ChaCha8Rng` seeded through
//! [`stream`], which mixes the global seed with a stage tag and an index
//! (user id, step number, ...). ChaCha8 is a fixed, documented integer
//! algorithm, so streams are identical across platforms and independent of
//! how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: u64, index: u64) -> Rng {
    let key = mix64(mix64(seed ^ tag.rotate_left(17)) ^ index);
    ChaCha8Rng::seed_from_u64(key)
}

/// Stage tags; arbitrary but fixed constants.
pub mod tags {
    pub const WORLD: u64 = 0x5752_4c44;
    pub const USER: u64 = 0x5553_4552;
    pub const FILTER: u64 = 0x464c_5452;
    pub const INDEX: u64 = 0x494e_4458;
    pub const INIT: u64 = 0x494e_4954;
    pub const WARMUP: u64 = 0x5741_524d;
    pub const BATCH: u64 = 0x4241_5443;
    pub const ROLLOUT: u64 = 0x524f_4c4c;
    pub const DISTILL: u64 = 0x4449_5354;
    pub const EVAL: u64 = 0x4556_414c;
}
