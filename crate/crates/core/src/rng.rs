//! Counter-based random streams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream addressed by a
//! key derived from the master seed and a path of indices (replica, row, …).
//! Work can therefore be split across threads in any way without changing
//! the numbers any individual unit sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and an index.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    mix(parent ^ mix(index.wrapping_add(0x2545_F491_4F6C_DD1D)))
}

/// Stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Tags separating the purposes a seed is used for.
pub(crate) mod tag {
    pub const LEVEL: u64 = u64::MAX;
    pub const SGD: u64 = u64::MAX - 1;
    pub const DATA: u64 = u64::MAX - 2;
    pub const FOLDS: u64 = u64::MAX - 3;
}
