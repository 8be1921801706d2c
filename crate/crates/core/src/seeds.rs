//! Deterministic seed derivation.
//!
//! A single master seed fans out into per-stage seeds, and each stage fans out
//! into per-sample ChaCha streams. Work scheduling (thread count, rayon
//! stealing order) never touches the streams, so results are reproducible
//! independently of the worker pool.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step — a solid 64-bit mixer for seed derivation.
#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Seed for a named stage derived from the master seed.
pub fn stage_seed(master: u64, label: &str) -> u64 {
    splitmix64(master ^ fnv1a(label))
}

/// Independent RNG stream `stream` under a stage seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
