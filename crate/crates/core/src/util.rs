//! Seed plumbing. Every random decision in the library draws from a named
//! substream of one base seed, so runs are reproducible end to end.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic RNG for the substream `name` of `seed`.
///
/// Distinct names give independent streams; the same (seed, name) pair always
/// yields the same stream regardless of call order elsewhere.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mixed = fnv1a(name.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Substream further keyed by an index (epoch number, shard id).
pub fn substream_indexed(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mixed = fnv1a(name.as_bytes())
        ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    ChaCha8Rng::seed_from_u64(mixed)
}
