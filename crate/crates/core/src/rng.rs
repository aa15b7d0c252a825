//! Seeded random streams.
//!
//! Every stochastic routine takes a `&mut SimRng` owned by the coordinating
//! thread. Independent streams for seeds and sub-tasks are derived with
//! [`substream`], which uses the ChaCha stream counter so that two streams
//! from one seed never overlap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for stream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
