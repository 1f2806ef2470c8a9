//! Deterministic random substreams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] keyed by a
//! master seed plus a domain tag, and positioned on a stream selected by an
//! index (realization, trial batch, AP, ...). Work items can therefore be
//! executed in any order, on any thread, and still see the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags separating independent uses of the same master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Placement = 1,
    Shadowing = 2,
    Paths = 3,
    Gains = 4,
    Estimates = 5,
    Trials = 6,
    Bootstrap = 7,
    Realization = 8,
    Fixture = 9,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A master seed from which keyed substreams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Child tree for work item `index` (e.g. one realization).
    pub fn child(&self, index: u64) -> SeedTree {
        SeedTree {
            master: splitmix64(splitmix64(self.master ^ 0x5eed_c41d) ^ index),
        }
    }

    /// Generator for `(domain, index)`. The key depends on the master seed and
    /// domain; the index selects the ChaCha stream.
    pub fn rng(&self, domain: Domain, index: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut s = splitmix64(self.master ^ (domain as u64).rotate_left(32));
        for chunk in key.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}
