//! Seeded random streams.
//!
//! Every run derives independent ChaCha8 streams from one 64-bit seed, one
//! per purpose, so that e.g. consuming extra randomness during gating never
//! shifts the stream used for reservoir updates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Scenario = 1,
    Dataset = 2,
    Stream = 3,
    Init = 4,
    Retrieval = 5,
    BufferUpdate = 6,
    Branch = 7,
}

pub fn stream_for(seed: u64, purpose: Purpose) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}
