//! Seeded, splittable randomness.
//!
//! Every stochastic operation in the crate takes an explicit [`RngState`].
//! Independent consumers (candidate draws, rollouts, estimator pair
//! subsampling, ...) get their own stream derived from the run seed so that
//! one consumer drawing more numbers never shifts another.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Named streams used by the training loop.
pub mod streams {
    pub const POOL: u64 = 1;
    pub const CANDIDATES: u64 = 2;
    pub const ROLLOUTS: u64 = 3;
    pub const ESTIMATOR_INIT: u64 = 4;
    pub const ESTIMATOR_PAIRS: u64 = 5;
    pub const OFFLINE_EVAL: u64 = 6;
    pub const ROUTER: u64 = 7;
    pub const QUERIES: u64 = 8;
}

#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent stream `stream` of the same seed. Deterministic in `(seed, stream)`
    /// and unaffected by how many numbers `self` has already produced.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Self { seed: self.seed, inner }
    }

    /// A stream keyed by two integers, used for per-query substreams.
    pub fn fork2(&self, stream: u64, index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        inner.set_stream(stream);
        Self { seed: self.seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}
