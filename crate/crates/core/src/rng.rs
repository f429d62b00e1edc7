//! Deterministic, labelled random-number streams.
//!
//! Every stochastic stage of the library (dataset synthesis, weight
//! initialization, shuffling, pulse sampling, search proposals) draws from
//! its own ChaCha8 stream seeded by hashing a root seed together with a
//! purpose label and integer indices. Streams are therefore independent of
//! each other, reproducible across platforms, and insensitive to how many
//! draws some other stage consumed.
//!
//! All floating-point and bounded-integer draws are derived here from raw
//! `next_u64` output so that the draw sequence is pinned by this crate, not
//! by an external crate's sampling internals.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use crate::math::normal_quantile;

pub type Stream = ChaCha8Rng;

/// Creates the stream identified by `(root_seed, label, indices)`.
pub fn stream(root_seed: u64, label: &str, indices: &[u64]) -> Stream {
    let mut h = Sha256::new();
    h.update(root_seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for &i in indices {
        h.update(i.to_le_bytes());
    }
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    Stream::from_seed(seed)
}

/// Derives a child seed with the same labelling scheme, for stages that
/// record a single `u64` (run seeds, trial seeds).
pub fn derive_seed(root_seed: u64, label: &str, indices: &[u64]) -> u64 {
    stream(root_seed, label, indices).next_u64()
}

/// Uniform draw from the open interval (0, 1).
///
/// Maps 53 random bits to (k + 0.5) * 2^-53, so 0 and 1 are unreachable and
/// the normal quantile applied to the result is always finite.
pub fn open_unit(rng: &mut Stream) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw from the open interval (lo, hi).
pub fn uniform(rng: &mut Stream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * open_unit(rng)
}

/// Standard normal draw via the inverse CDF.
pub fn standard_normal(rng: &mut Stream) -> f64 {
    normal_quantile(open_unit(rng))
}

/// Unbiased uniform draw from `0..n` by rejection.
pub fn below(rng: &mut Stream, n: usize) -> usize {
    assert!(n > 0);
    let n = n as u64;
    let limit = u64::MAX - u64::MAX % n;
    loop {
        let x = rng.next_u64();
        if x < limit {
            return (x % n) as usize;
        }
    }
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut Stream, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}
