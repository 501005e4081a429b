//! Seed stream derivation.
//!
//! Every random decision in the toolkit draws from a ChaCha8 stream whose
//! 64-bit seed is derived with [`mix`]. The derivation is a splitmix64 chain:
//!
//! ```text
//! h = splitmix64(seed)
//! h = splitmix64(h ^ fnv1a64(key))
//! h = splitmix64(h ^ index)
//! ```
//!
//! Because each work item gets its own stream, results do not depend on how
//! items are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// The splitmix64 output function applied to `x + gamma`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive the seed for item `index` of stream `key` under the global `seed`.
pub fn mix(seed: u64, key: &str, index: u64) -> u64 {
    let h = splitmix64(seed);
    let h = splitmix64(h ^ fnv1a64(key.as_bytes()));
    splitmix64(h ^ index)
}

/// A generator for item `index` of stream `key`.
pub fn stream(seed: u64, key: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, key, index))
}
