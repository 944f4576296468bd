//! Seedable random streams.
//!
//! All randomness in the crate flows through ChaCha8 keyed by a 64-bit seed,
//! with the 64-bit stream id separating independent substreams (Monte Carlo
//! chunks, simulation replicates, fold shuffles). ChaCha8 and the uniform
//! mapping below are fixed by this module, so every sequence is reproducible
//! bit-exactly across platforms and across the `parallel` feature settings.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Returns substream `stream_id` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// A uniform draw strictly inside (0, 1): the top 53 bits of one 64-bit
/// output, offset by half an ulp so that neither endpoint is attainable.
pub fn unit_open(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// Fisher-Yates shuffle driven by the raw 64-bit stream. Hand-rolled so the
/// permutation is pinned by this crate rather than by a dependency version.
pub fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}
