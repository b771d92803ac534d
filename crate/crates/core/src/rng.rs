//! Seeded random streams.
//!
//! Every run derives independent ChaCha streams from one seed, one per
//! purpose, so that changing how many draws one consumer makes never shifts
//! the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Named substreams of a run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Topology = 1,
    Masks = 2,
    Samples = 3,
    Data = 4,
    Init = 5,
}

pub fn substream(seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
