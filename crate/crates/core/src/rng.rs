//! Seeded, splittable random streams.
//!
//! Every stochastic choice made while fitting a model (weight init, minibatch
//! order, dropout and corruption masks) is drawn from a named substream of a
//! single 64-bit seed. Each substream is an independent ChaCha8 keystream:
//! the key comes from `seed` (via `SeedableRng::seed_from_u64`, which expands
//! the seed with PCG32) and the 64-bit ChaCha stream id is
//! `(substream tag << 32) | index`. ChaCha output is defined bit-for-bit, so
//! draws are identical on every platform.
//!
//! Two fits that share a seed therefore make exactly the same random choices,
//! which is what common random numbers needs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Substream {
    Init,
    Shuffle,
    Dropout,
    Corruption,
    Perturbation,
    Data,
    Folds,
}

impl Substream {
    fn tag(self) -> u64 {
        match self {
            Substream::Init => 1,
            Substream::Shuffle => 2,
            Substream::Dropout => 3,
            Substream::Corruption => 4,
            Substream::Perturbation => 5,
            Substream::Data => 6,
            Substream::Folds => 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for `substream`, phase `index` (e.g. a layer number).
    pub fn substream(&self, substream: Substream, index: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((substream.tag() << 32) | u64::from(index));
        rng
    }
}
