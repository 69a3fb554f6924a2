//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by
//! `(master seed, stream index)`, so results do not depend on the order in
//! which independent work items are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

/// Stream reserved for draws shared by every repetition of an experiment.
pub const SHARED_STREAM: u64 = u64::MAX;

pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
