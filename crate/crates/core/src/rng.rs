//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator addressed by
//! a `(seed, stream_id)` pair. Substreams are derived by hashing a key into
//! the stream id, so per-player and per-chain draws do not depend on the
//! order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeededRng {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a, used to key substreams by string labels such as player ids.
pub fn stable_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl SeededRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Child stream keyed by `key`; distinct keys give distinct streams.
    pub fn substream(&self, key: u64) -> Self {
        let mixed = splitmix64(self.stream_id ^ splitmix64(key.wrapping_add(0x632B_E59B_D9B4_E019)));
        Self {
            seed: self.seed,
            stream_id: mixed,
        }
    }

    pub fn named(&self, label: &str) -> Self {
        self.substream(stable_hash(label))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}
