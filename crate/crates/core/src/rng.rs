//! Seeded randomness.
//!
//! Every stochastic routine takes a 64-bit seed and builds its own ChaCha8
//! stream from it. ChaCha is a counter-mode generator, so a stream is fully
//! determined by `(seed, stream id)` and independent of call order elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for `seed`, on a stream chosen by `stream` so that different
/// consumers of the same seed never share draws.
pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser; used to derive per-record seeds from a master seed.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub mod streams {
    pub const TEXTURE: u64 = 1;
    pub const DERECRUIT: u64 = 2;
    pub const SCATTER: u64 = 3;
    pub const RECORD: u64 = 4;
    pub const AUGMENT: u64 = 5;
    pub const INIT: u64 = 6;
    pub const SHUFFLE: u64 = 7;
}
