//! Deterministic seed derivation.
//!
//! Batch jobs derive one seed per sample from `(master_seed, index)` so the
//! generated content is independent of worker scheduling: trial `i` sees the
//! same stream no matter which thread runs it or in which order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a master seed and an index into a single 64-bit seed
/// (SplitMix64-style finalizer).
pub fn derive(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A reproducible RNG for the given seed. ChaCha output is identical across
/// platforms, which the dataset and training determinism contracts rely on.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for sample `index` of a batch job with the given master seed.
pub fn derived_rng(master: u64, index: u64) -> ChaCha8Rng {
    rng(derive(master, index))
}
