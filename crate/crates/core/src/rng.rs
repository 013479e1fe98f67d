//! Seeded random streams.
//!
//! Every stochastic component of a trial gets its own ChaCha stream derived
//! from the trial seed, so changing how often one component draws never
//! perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Named sub-streams of one trial seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Placement = 1,
    Minibatch = 2,
    Routing = 3,
    Partition = 4,
}

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, which: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Stream for node `node` of a per-node component (gossip minibatches).
pub fn node_stream(seed: u64, which: Stream, node: usize) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((node as u64 + 1) << 8) | which as u64);
    rng
}
