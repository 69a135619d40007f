//! Seeded random streams. Every consumer derives its own stream from a base
//! seed and a tag so that adding a consumer never shifts another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finaliser.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tag: u64) -> u64 {
    mix(mix(base) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub mod tags {
    pub const GENERATOR: u64 = 1;
    pub const CRITIC: u64 = 2;
    pub const REINIT: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const SAMPLES: u64 = 5;
    pub const ESTIMATE: u64 = 6;
}
