//! Seeded random streams. Everything random in the crate flows through here.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream keyed by `(seed, key)`; stable across runs and platforms.
pub fn keyed(seed: u64, key: &str) -> Rng {
    seeded(splitmix64(seed ^ fnv1a(key.as_bytes())))
}

/// Independent stream keyed by `(seed, index)`.
pub fn indexed(seed: u64, index: u64) -> Rng {
    seeded(splitmix64(seed.wrapping_add(splitmix64(index))))
}

fn fnv1a(data: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in data {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
