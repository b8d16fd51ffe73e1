//! Seed threading for reproducible Monte Carlo.
//!
//! Every job owns a 64-bit seed; replicate `r` of a job draws from ChaCha8
//! stream `r` under that seed, so any replicate can be regenerated in
//! isolation and parallel evaluation order never changes results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Generator for replicate `stream` of the job seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a tag into a seed (splitmix64 finalizer) to give independent jobs
/// distinct seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Tags for `derive_seed`, one per consumer of randomness.
pub mod tag {
    pub const NULL: u64 = 1;
    pub const POWER: u64 = 2;
    pub const DIVERGENCE: u64 = 3;
    pub const BOOTSTRAP: u64 = 4;
    pub const PHI: u64 = 5;
    pub const ONLINE: u64 = 6;
    pub const CALIBRATE: u64 = 7;
}
