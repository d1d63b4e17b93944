//! Seed derivation. Every random stream in a run descends from one root
//! seed through a chain of integer labels, so adding a new consumer never
//! shifts the draws of an existing one.
//!
//! `derive_seed(s, [a, b])` seeds a `ChaCha8Rng` with `s`, switches it to
//! stream `a`, takes the first `u64` as the next seed, and repeats with `b`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Labels for the top-level streams of one search run.
pub mod label {
    pub const SELECTION: u64 = 1;
    pub const GENERATION: u64 = 2;
    pub const MIXED_FIT: u64 = 3;
    pub const RUN: u64 = 4;
}

pub fn derive_seed(root: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(root, |seed, &l| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(l);
        rng.next_u64()
    })
}

pub fn derived_rng(root: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, labels))
}
