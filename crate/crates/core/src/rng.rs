//! Seeded random streams.
//!
//! Every sampler derives its streams from a 64-bit master seed: stream 0
//! drives symbol transitions, stream 1 drives marks and acceptance draws,
//! higher streams are handed to Monte-Carlo replicas.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const SYMBOL_STREAM: u64 = 0;
pub const MARK_STREAM: u64 = 1;

pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Disjoint substream for replica `index` (streams 2, 3, ...).
pub fn replica(seed: u64, index: u64) -> StreamRng {
    stream(seed, 2 + index)
}
