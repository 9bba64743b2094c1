//! Counter-style random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream whose key is a
//! pure function of a tuple of integers (master seed, sample index, ...).
//! Sample `k` of an ensemble therefore does not depend on which worker
//! produced it or in which order samples were evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Domain tags keep streams for different purposes disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Cue = 1,
    Gate = 2,
    Tuples = 3,
    Moment = 4,
    Misc = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream keyed by `(seed, domain, path...)`.
pub fn stream(seed: u64, domain: Domain, path: &[u64]) -> Stream {
    let mut h = splitmix(seed ^ (domain as u64).wrapping_mul(0xA076_1D64_78BD_642F));
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0xE703_7ED1_A0B4_28DB)));
    }
    let mut key = [0u8; 32];
    let mut w = h;
    for chunk in key.chunks_mut(8) {
        w = splitmix(w);
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
