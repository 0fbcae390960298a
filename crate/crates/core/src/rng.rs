//! Seeded random streams.
//!
//! All randomness flows through ChaCha8, whose output is specified
//! independently of platform and word size, so a seed reproduces the same
//! datasets, initializations and batch orders everywhere. Normal variates
//! come from `rand_distr`'s deterministic ziggurat transform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type DdnRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> DdnRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` derived from a master seed.
pub fn substream(seed: u64, stream: u64) -> DdnRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Master seed of trial `trial` in a suite started from `seed`.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    seed.wrapping_add(trial.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Named sub-streams of one master seed.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const PATHS: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const DATA: u64 = 5;
    pub const TEST_DATA: u64 = 6;
}
