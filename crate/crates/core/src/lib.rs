//! Sequential recommendation with Gaussian item and sequence distributions.
//!
//! Items are diagonal Gaussians. A user's sequence is encoded by twin
//! self-attention towers (one for means, one for covariances) into the
//! distribution of the next item, trained with a pairwise ranking loss on
//! squared 2-Wasserstein distances and evaluated with top-N metrics.
//!
//! The crate is `no_std` + `alloc`; file formats, caching and the CLI live
//! in the `gsr` crate.
#![no_std]

extern crate alloc;

pub mod data;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod training;

/// RNG used for every seeded stream in the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Derives an independent stream seed from a base seed and two labels.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
