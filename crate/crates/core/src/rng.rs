//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by the master seed. Streams are
//! separated by the ChaCha stream id (one per [`StreamKind`]) and, for the
//! per-consumer environment streams, by a block offset into the keystream.
//! Swapping the learning agent therefore never perturbs the environment's
//! draws for a given `(consumer, step)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random stream type used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Words reserved per consumer in an environment stream.
const CONSUMER_STRIDE_WORDS: u128 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamKind {
    Environment = 1,
    Agent = 2,
    Schedule = 3,
}

/// Splits a master seed into independent substreams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn base(&self, kind: StreamKind) -> SimRng {
        let mut rng = ChaCha8Rng::from_seed(expand_seed(self.seed));
        rng.set_stream(kind as u64);
        rng
    }

    /// Environment stream for one consumer (0-based index).
    pub fn environment(&self, consumer: u64) -> SimRng {
        let mut rng = self.base(StreamKind::Environment);
        rng.set_word_pos(consumer as u128 * CONSUMER_STRIDE_WORDS);
        rng
    }

    pub fn agent(&self) -> SimRng {
        self.base(StreamKind::Agent)
    }

    pub fn schedule(&self) -> SimRng {
        self.base(StreamKind::Schedule)
    }
}

/// Stand-alone stream from a seed, for callers outside the simulation harness.
pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::from_seed(expand_seed(seed))
}

fn expand_seed(seed: u64) -> [u8; 32] {
    // splitmix64
    let mut state = seed;
    let mut out = [0u8; 32];
    for chunk in out.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    out
}
