//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from `(global seed, purpose, index)`, so adding a new consumer
//! never shifts the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed, a purpose tag and an index into a new 64-bit seed.
pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    // FNV-1a over the tag
    let mut tag = 0xCBF2_9CE4_8422_2325u64;
    for b in purpose.bytes() {
        tag ^= u64::from(b);
        tag = tag.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index)
}

pub fn rng_for(seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, index))
}
