//! Deterministic derivation of independent random streams from one master
//! seed. Every particle, chain, and replicate gets its own stream keyed by
//! a tag path, so parallel execution cannot change the numbers drawn.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a ChaCha stream from `master` and an ordered tag path.
/// Different paths give statistically independent streams; the same path
/// always gives the same stream.
pub fn derive_rng(master: u64, tags: &[u64]) -> ChaCha12Rng {
    let mut h = splitmix64(master ^ 0x243f_6a88_85a3_08d3);
    for (i, &t) in tags.iter().enumerate() {
        h = splitmix64(h ^ t.wrapping_add(0x1000_0000_0000_0001u64.wrapping_mul(i as u64 + 1)));
    }
    let mut seed = [0u8; 32];
    let mut s = h;
    for chunk in seed.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha12Rng::from_seed(seed)
}
