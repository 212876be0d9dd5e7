//! Seeded randomness shared by sampling, splitting, initialisation and
//! synthetic data.
//!
//! All streams come from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
//! `SeedableRng::seed_from_u64`. A stream is identified by a `u64` run seed plus
//! a string salt (category name, stratum key, purpose tag); the two are folded
//! together with [`derive_seed`]:
//!
//! ```text
//! derive_seed(seed, salt) = splitmix64(seed ^ fnv1a64(salt))
//! ```
//!
//! Shuffles are a Fisher-Yates pass from the last index down, drawing each
//! swap index with [`bounded`] (rejection sampling on `next_u64`, no modulo
//! bias). None of this depends on `rand`'s distribution internals, so the
//! sequences are reproducible by any implementation of the same three steps.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, salt: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(salt.as_bytes()))
}

pub fn stream(seed: u64, salt: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, salt))
}

/// Uniform integer in `0..bound`. `bound` must be non-zero.
pub fn bounded<R: RngCore>(rng: &mut R, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    // largest multiple of `bound` that fits; draws at or above it are rejected
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % bound;
        }
    }
}

pub fn shuffle<T, R: RngCore>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = bounded(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}
