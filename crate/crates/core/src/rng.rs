//! Keyed random streams.
//!
//! Every random draw in the pipeline comes from a ChaCha stream keyed by the
//! master seed and a purpose domain, with the stream id carrying the two
//! task coordinates (attack type and trial, restart index, ...). Streams are
//! independent of scheduling order, so parallel work reproduces serial work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u64)]
pub enum Domain {
    AttackSample = 1,
    KMedians = 2,
    RandomAllocation = 3,
    Partition = 4,
    Test = 0xffff,
}

/// Identifies one random stream: `(seed, domain)` is the key, `(major, minor)`
/// the stream coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub seed: u64,
    pub domain: Domain,
    pub major: u32,
    pub minor: u32,
}

impl StreamId {
    pub fn new(seed: u64, domain: Domain, major: u32, minor: u32) -> Self {
        Self {
            seed,
            domain,
            major,
            minor,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(self.domain as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream((u64::from(self.major) << 32) | u64::from(self.minor));
        rng
    }
}
