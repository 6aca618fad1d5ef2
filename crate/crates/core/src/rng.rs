//! Counter-based random streams derived from a single root seed.
//!
//! A [`StreamSeed`] never hands out a stateful generator that is shared
//! between workers. Instead every consumer names its stream by a short tuple
//! of ids (purpose tag, agent, time index, replicate, ...) and gets a fresh
//! ChaCha generator keyed by the root seed and positioned on a stream number
//! hashed from that tuple. Two calls with the same tuple produce the same
//! numbers regardless of call order or thread.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Purpose tags keep streams of different subsystems apart.
pub mod tag {
    pub const DATASET: u64 = 0x6461_7461;
    pub const SIMULATION: u64 = 0x7369_6d75;
    pub const MONTE_CARLO_INIT: u64 = 0x6d63_696e;
    pub const GRID_NOISE: u64 = 0x6772_6964;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StreamSeed(u64);

impl StreamSeed {
    pub fn new(root: u64) -> Self {
        StreamSeed(root)
    }

    pub fn root(&self) -> u64 {
        self.0
    }

    /// Generator for the stream named by `ids`.
    pub fn stream(&self, ids: &[u64]) -> ChaCha12Rng {
        let mut key = [0u8; 32];
        let mut s = self.0;
        for chunk in key.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        let mut stream = splitmix64(ids.len() as u64);
        for &id in ids {
            stream = splitmix64(stream ^ splitmix64(id));
        }
        let mut rng = ChaCha12Rng::from_seed(key);
        rng.set_stream(stream);
        rng
    }

    /// A child seed, for handing a whole sub-tree of streams to another
    /// component (for example one dataset per agent).
    pub fn child(&self, id: u64) -> StreamSeed {
        StreamSeed(splitmix64(self.0 ^ splitmix64(id.wrapping_add(GOLDEN))))
    }
}
