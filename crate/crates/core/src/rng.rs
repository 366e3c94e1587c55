//! Seeded random streams.
//!
//! Every stochastic component of a replica draws from its own ChaCha stream
//! derived from the run seed, so adding draws to one component never shifts
//! another component's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Topology = 1,
    Channel = 2,
    Traffic = 3,
    Activity = 4,
    Scenario = 5,
    Training = 6,
    Init = 7,
}

pub fn stream(seed: u64, which: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
