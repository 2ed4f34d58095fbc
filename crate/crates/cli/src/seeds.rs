//! Named random sub-streams of the master seed.
//!
//! Each component draws from its own ChaCha stream, so changing how much
//! randomness one component consumes leaves the others untouched.

use rand::SeedableRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Random system matrix of the toy model.
    Model,
    /// Observation noise.
    Noise,
    /// Stochastic OED solver.
    Solver,
    /// Prior draws, including the twin-experiment truth.
    Sampling,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Model => 1,
            Stream::Noise => 2,
            Stream::Solver => 3,
            Stream::Sampling => 4,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> bayesoed::Rng {
    let mut rng = bayesoed::Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
