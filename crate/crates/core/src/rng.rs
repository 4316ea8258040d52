//! Deterministic random streams.
//!
//! A run owns a single master seed. Every stochastic component asks for its
//! own stream keyed by a component tag and a counter, so adding draws to one
//! component never shifts the numbers another component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSource {
    master: u64,
}

impl SeedSource {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Stream for `(master, tag, counter)`.
    pub fn stream(&self, tag: &str, counter: u64) -> StreamRng {
        let mut hasher = Sha256::new();
        hasher.update(self.master.to_le_bytes());
        hasher.update((tag.len() as u64).to_le_bytes());
        hasher.update(tag.as_bytes());
        hasher.update(counter.to_le_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    /// A child source, for handing a sub-component its own namespace.
    pub fn derive(&self, tag: &str, counter: u64) -> SeedSource {
        use rand::RngCore;
        SeedSource::new(self.stream(tag, counter).next_u64())
    }
}
