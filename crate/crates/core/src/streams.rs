//! Deterministic derivation of independent RNG streams.
//!
//! A stream is keyed by (seed, scenario, name). The same key always yields
//! the same stream, regardless of thread count or the order in which
//! streams are created; that is what makes common random numbers across
//! scenarios work.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn stream_seed(seed: u64, scenario: u64, name: &str) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(scenario)) ^ fnv1a(name.as_bytes()))
}

pub(crate) fn stream(seed: u64, scenario: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, scenario, name))
}
