//! Reproducible random streams.
//!
//! Every random draw in an experiment comes from a ChaCha8 generator keyed by
//! a single master seed. Individual runs get their own stream, addressed by a
//! `(phase, index)` pair, so run `j` of a phase is reproducible without
//! replaying runs `0..j` and results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator handed to samplers.
pub type StreamRng = ChaCha8Rng;

/// Bits of the ChaCha stream id reserved for the run index.
const INDEX_BITS: u32 = 40;

/// Well-known phase identifiers.
pub mod phase {
    pub const RUNS: u32 = 0;
    pub const RAS_PHASE_ONE: u32 = 1;
    pub const RAS_PHASE_TWO: u32 = 2;
    pub const CENTER: u32 = 3;
    pub const ACCEPT_REJECT: u32 = 4;
}

/// Derives independent per-run streams from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream `index` of `phase`. Panics if `index` does not fit in 40 bits.
    pub fn stream(&self, phase: u32, index: u64) -> StreamRng {
        assert!(index < (1 << INDEX_BITS), "run index {index} too large");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((u64::from(phase) << INDEX_BITS) | index);
        rng
    }

    /// Streams for a derived sub-experiment (e.g. one repetition of a study).
    pub fn fork(&self, tag: u64) -> RngStreams {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX - tag);
        use rand::RngCore;
        RngStreams::new(rng.next_u64())
    }
}
