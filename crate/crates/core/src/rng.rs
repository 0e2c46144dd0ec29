//! Seed derivation for reproducible, order-independent random streams.
//!
//! Every chain gets its own `ChaCha8Rng` keyed by a 64-bit seed. Seeds for
//! sub-streams are derived from a parent seed and a list of integer keys
//! by folding each key through the SplitMix64 finalizer:
//!
//! ```text
//! s_0 = parent
//! s_{i+1} = mix(s_i ^ mix(key_i + GOLDEN))
//! ```
//!
//! The derivation depends only on (parent, keys), so replicates and chains
//! can be scheduled on any number of workers and still see the same streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `parent` and an ordered list of keys.
pub fn derive_seed(parent: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix(parent.wrapping_add(GOLDEN)), |s, &k| {
        mix(s ^ mix(k.wrapping_add(GOLDEN)))
    })
}

pub fn chain_rng(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags so that different consumers of one parent seed never collide.
pub mod tag {
    pub const TRUTH: u64 = 1;
    pub const DATA: u64 = 2;
    pub const GEM: u64 = 3;
    pub const ORACLE: u64 = 4;
    pub const POSTERIOR: u64 = 5;
    pub const PRIOR: u64 = 6;
    pub const FINAL: u64 = 7;
    pub const GROUP: u64 = 8;
}
