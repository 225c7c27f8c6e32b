//! Deterministic named RNG streams.
//!
//! Every random draw in this crate comes from a stream derived from a master
//! seed plus a label path (e.g. `[replicate, round, purpose, device]`), so
//! channel realizations, noise vectors and mini-batch selections are each
//! reproducible in isolation: changing how many draws one consumer takes
//! never shifts the values another consumer sees.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby integer labels.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a 64-bit stream seed from a master seed and a label path.
pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    let mut state = mix(master);
    for &label in labels {
        state = mix(state ^ mix(label));
    }
    state
}

/// Derive an independent RNG stream from a master seed and a label path.
pub fn derive_rng(master: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, labels))
}
