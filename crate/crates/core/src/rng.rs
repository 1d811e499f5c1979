//! Seed derivation and independent random streams.
//!
//! Every consumer of randomness gets a ChaCha generator keyed by a 64-bit
//! seed and a stream id. Distinct stream ids give statistically independent
//! sequences for the same seed, which is how foreground and background
//! motions of a synthetic scene are kept independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used by the synthetic scene generator.
pub mod streams {
    pub const SHAPE: u64 = 1;
    pub const FOREGROUND_MOTION: u64 = 2;
    pub const BACKGROUND_MOTION: u64 = 3;
    pub const TEXTURE: u64 = 4;
    pub const NOISE: u64 = 5;
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of item `index` of a collection seeded with `seed`.
pub fn derive(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
