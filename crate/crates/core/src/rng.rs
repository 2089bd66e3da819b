//! Counter-based random number streams.
//!
//! Every Monte Carlo sample draws from its own substream keyed by
//! `(master_seed, sample_index)`. Results are therefore independent of the
//! number of workers and of the order in which samples are produced.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Seed for one substream of the master generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub sample_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, sample_index: u64) -> Self {
        Self { master_seed, sample_index }
    }

    /// Child seed for a nested loop (grid point, mass sweep, ...).
    ///
    /// Uses a splitmix64 step so that distinct `tag`s give statistically
    /// unrelated master seeds.
    pub fn child(&self, tag: u64) -> Self {
        let mut z = self.master_seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        Self { master_seed: z ^ (z >> 31), sample_index: self.sample_index }
    }

    pub fn with_sample(&self, sample_index: u64) -> Self {
        Self { master_seed: self.master_seed, sample_index }
    }

    /// The substream generator. ChaCha streams are indexed by a 64-bit
    /// counter, so (master_seed, sample_index) -> substream is injective.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.sample_index);
        rng
    }
}
