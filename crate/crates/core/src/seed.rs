//! Seed derivation. Every random stream in a run descends from a single
//! 64-bit seed through [`derive`], so one number reproduces a whole
//! experiment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used by the pipeline.
pub mod stream {
    pub const ITQ_INIT: u64 = 1;
    pub const LSH_PLANES: u64 = 2;
    pub const SYNTH_LATENT: u64 = 3;
    pub const SYNTH_SEASON: u64 = 4;
    pub const SYNTH_NOISE_DB: u64 = 5;
    pub const SYNTH_NOISE_QUERY: u64 = 6;
    pub const SYNTH_CORRUPT: u64 = 7;
}

/// SplitMix64 finaliser applied to `seed` offset by the stream id.
pub fn derive(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream))
}
