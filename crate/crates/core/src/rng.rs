//! Deterministic RNG stream derivation.
//!
//! Every random decision in a run is drawn from a stream derived from the
//! root seed plus a path of integer tags (e.g. `[ITER, i, EPISODE, e]`).
//! Streams are independent of how work is scheduled across threads, so a
//! run's outputs depend only on the seed, never on worker count or timing.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tag namespaces for stream derivation. Keep these distinct so different
/// phases of the algorithm can never collide on a stream.
pub mod tag {
    pub const COLLECT: u64 = 0x01;
    pub const TRAIN: u64 = 0x02;
    pub const EVAL: u64 = 0x03;
    pub const ENV: u64 = 0x04;
    pub const LAB: u64 = 0x05;
}

/// SplitMix64 step; used to mix tags into the seed.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `root` and a path of tags.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    let mut state = root ^ 0x6a09e667f3bcc908;
    let mut out = splitmix64(&mut state);
    for &t in path {
        state ^= t.wrapping_mul(0x2545f4914f6cdd1d);
        out ^= splitmix64(&mut state);
    }
    out
}

/// A fresh generator for the stream identified by `(root, path)`.
pub fn stream(root: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}
