//! Seed derivation for independent, scheduling-free RNG streams.
//!
//! Every agent, trial and method draws from its own ChaCha stream whose seed
//! is a pure function of the master seed and a stable identifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Child seed for stream `id` under `seed`.
pub fn derive_seed(seed: u64, id: u64) -> u64 {
    mix64(seed ^ mix64(id.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

pub fn stream(seed: u64, id: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, id))
}
