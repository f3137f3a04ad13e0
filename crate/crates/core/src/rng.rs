//! Random sources.
//!
//! Every stochastic routine in the crate draws from [`SimRng`], a ChaCha
//! stream cipher with 12 rounds seeded through `SeedableRng::seed_from_u64`.
//! ChaCha output is defined bit-for-bit independently of platform and word
//! size, so a `(seed, parameters)` pair always replays the same numbers.
//! Independent streams (Monte Carlo trials, generation retries) get their
//! seed from [`derive_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type SimRng = ChaCha12Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `stream`-th independent sub-stream of `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}
