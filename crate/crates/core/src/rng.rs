//! Seeded random streams.
//!
//! Every random choice in the crate goes through ChaCha8 (`rand_chacha`),
//! which produces the same sequence on every platform. A single user seed
//! is split into independent streams with ChaCha's 64-bit stream counter,
//! so graph sampling, edge orientation and weight initialisation never
//! share draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers for the sub-generators derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Edges = 1,
    Orientation = 2,
    Weights = 3,
    Reassign = 4,
    Data = 5,
}

pub fn seeded(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
