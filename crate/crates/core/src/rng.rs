//! Deterministic random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from a
//! single experiment seed, so that changing how much one consumer draws never
//! perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    DataOrder = 2,
    Prior = 3,
    Time = 4,
    Pairing = 5,
    Sampling = 6,
    Decode = 7,
    Dataset = 8,
    Distribution = 9,
    Floor = 10,
    Heldout = 11,
}

/// Stream for `purpose` under `seed`.
pub fn stream(seed: u64, purpose: Purpose) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Stream for the `index`-th chunk of a parallel job, independent of how
/// chunks are scheduled across threads.
pub fn chunk_stream(seed: u64, purpose: Purpose, index: u64) -> Rng {
    let mixed = seed ^ (index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(purpose as u64);
    rng
}

/// Serializable position of a stream: `(seed, stream, word_pos)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
