//! Keyed random streams.
//!
//! Every random decision draws from a ChaCha8 stream seeded by hashing the
//! run seed together with the decision's coordinates (frame, stage, voxel
//! key, ...). Results therefore do not depend on evaluation order or on how
//! work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` and `keys` into one 64-bit stream id.
pub fn mix(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix64(seed), |acc, &k| splitmix64(acc.wrapping_add(0x632B_E59B_D9B4_E019) ^ splitmix64(k)))
}

pub fn keyed(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, keys))
}
