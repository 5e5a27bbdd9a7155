//! Deterministic seed derivation.
//!
//! Every randomized stage draws from its own ChaCha stream whose seed is a
//! pure function of the master seed and a stage name, so stages can be
//! reordered, skipped, or parallelized without perturbing one another.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

/// Master seed plus stable per-stage derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPolicy {
    master: u64,
}

impl SeedPolicy {
    pub fn new(master: u64) -> Self {
        SeedPolicy { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Derived seed for a named stage. Identical (master, stage) pairs yield
    /// identical seeds on every platform.
    pub fn derive(&self, stage: &str) -> u64 {
        splitmix64(self.master ^ fnv1a(stage.as_bytes()))
    }

    /// Derived seed for an indexed stage (per-trial, per-candidate, ...).
    pub fn derive_indexed(&self, stage: &str, index: u64) -> u64 {
        splitmix64(self.derive(stage) ^ splitmix64(index).wrapping_add(1))
    }

    pub fn rng(&self, stage: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(stage))
    }

    pub fn rng_indexed(&self, stage: &str, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive_indexed(stage, index))
    }
}

/// FNV-1a, fixed here so hashes never drift with std releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
