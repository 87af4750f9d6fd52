//! Deterministic stream splitting for seeded randomness.
//!
//! Every randomized routine derives an independent ChaCha stream from a
//! user seed plus a fixed tag path (module, row, repeat, ...). Streams are
//! stable across thread counts and platforms, so replayed runs are
//! byte-identical regardless of scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a generator for `(seed, tags...)`. Different tag paths give
/// statistically independent streams; the same path always gives the same
/// stream.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x6a09_e667_f3bc_c908;
    let mut key = [0u8; 32];
    for &t in tags {
        state ^= splitmix64(&mut state) ^ t.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    }
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Derives a child seed rather than a generator; used when an operation's
/// signature takes a seed of its own.
pub fn child_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut state = seed ^ 0xbb67_ae85_84ca_a73b;
    for &t in tags {
        state ^= splitmix64(&mut state) ^ t.rotate_left(17);
    }
    splitmix64(&mut state)
}

// ==== tests ====
