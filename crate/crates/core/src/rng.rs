//! Deterministic stream splitting for reproducible simulation.
//!
//! Every stochastic component draws from a `ChaCha8Rng` seeded by mixing a
//! master seed with one or more stream tags. Mixing uses SplitMix64 so that
//! nearby tags produce unrelated streams, and results are identical across
//! platforms and thread schedules.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One SplitMix64 round.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a seed with a stream tag.
#[inline]
pub fn mix(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Mix a seed with two tags (e.g. a component id and an index).
#[inline]
pub fn mix2(seed: u64, tag_a: u64, tag_b: u64) -> u64 {
    mix(mix(seed, tag_a), tag_b)
}

/// Mix a seed with three tags.
#[inline]
pub fn mix3(seed: u64, tag_a: u64, tag_b: u64, tag_c: u64) -> u64 {
    mix(mix2(seed, tag_a, tag_b), tag_c)
}

/// RNG for the substream `(seed, tag)`.
pub fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tag))
}

/// RNG for the substream `(seed, tag_a, tag_b)`.
pub fn stream2(seed: u64, tag_a: u64, tag_b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix2(seed, tag_a, tag_b))
}

/// RNG for the substream `(seed, tag_a, tag_b, tag_c)`.
pub fn stream3(seed: u64, tag_a: u64, tag_b: u64, tag_c: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix3(seed, tag_a, tag_b, tag_c))
}
