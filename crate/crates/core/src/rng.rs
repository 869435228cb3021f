//! Named, seeded random streams.
//!
//! Every random draw in the crate goes through a stream derived from a master
//! seed and a path of integers (purpose tag, iteration, datapoint, ...), so
//! results never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream purpose tags.
pub mod tag {
    pub const SCHEDULE: u64 = 1;
    pub const DRAW: u64 = 2;
    pub const DATA_INPUTS: u64 = 3;
    pub const DATA_WEIGHTS: u64 = 4;
    pub const DATA_LABELS: u64 = 5;
    pub const VARIANCE: u64 = 6;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a 64-bit sub-seed from a master seed and a path.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Independent ChaCha stream for `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, path))
}
