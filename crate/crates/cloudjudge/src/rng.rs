//! Seeded random substreams.
//!
//! Every stochastic operation in this crate draws from a ChaCha20 stream
//! whose 256-bit key is derived from a user seed plus a list of purpose
//! tags (metric kind, batch index, jet index, ...). Substreams are
//! independent of thread count and evaluation order: work item `i` always
//! sees the stream keyed by `(seed, tags..., i)`, so parallel and serial
//! runs produce identical output.
//!
//! The exact derivation, pinned here so other implementations can
//! reproduce the streams bit for bit:
//!
//! 1. `state = seed`; for each tag `t`: `state = mix64(state ^ (t * 0xA24BAED4963EE407))`
//! 2. the ChaCha20 key is eight 32-bit words taken from four further
//!    `mix64` outputs, serialized little-endian,
//!
//! where `mix64` is the SplitMix64 output function
//! (`z += 0x9E3779B97F4A7C15; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
//! z = (z ^ z>>27) * 0x94D049BB133111EB; z ^ z>>31`).
//!
//! Uniform doubles are `(next_u64 >> 11) * 2^-53` (in `[0, 1)`), bounded
//! integers use masked rejection, and exponentials use inversion.

use rand_chacha::ChaCha20Rng;
use rand_core::{Rng, SeedableRng};

/// Purpose tags keeping unrelated substreams apart even under equal seeds.
pub mod tag {
    pub const TOY_JET: u64 = 0x01;
    pub const W1_BATCH: u64 = 0x02;
    pub const BASELINE_BATCH: u64 = 0x03;
    pub const COV_BATCH: u64 = 0x04;
    pub const FPND_DRAW: u64 = 0x05;
    pub const MP_INIT: u64 = 0x06;
}

const TAG_SALT: u64 = 0xA24BAED4963EE407;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the ChaCha20 substream for `(seed, tags...)`.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha20Rng {
    let mut state = seed;
    for &t in tags {
        let mixed = state ^ t.wrapping_mul(TAG_SALT);
        state = mixed;
        splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha20Rng::from_seed(key)
}

/// Unbiased integer in `[0, n)` by masked rejection.
pub fn u64_below(rng: &mut impl Rng, n: u64) -> u64 {
    assert!(n > 0, "u64_below requires n > 0");
    if n == 1 {
        return 0;
    }
    let mask = u64::MAX >> (n - 1).leading_zeros();
    loop {
        let x = rng.next_u64() & mask;
        if x < n {
            return x;
        }
    }
}

/// Uniform double in `[0, 1)` with 53 random bits.
pub fn uniform_f64(rng: &mut impl Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform double in `[lo, hi)`.
pub fn uniform_in(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform_f64(rng)
}

/// Exponential variate with the given mean, by inversion.
pub fn exponential(rng: &mut impl Rng, mean: f64) -> f64 {
    -mean * (1.0 - uniform_f64(rng)).ln()
}

/// Draw `k` distinct indices from `0..n` by partial Fisher-Yates.
///
/// The result order is the draw order, which is part of the pinned stream
/// contract. Panics if `k > n`.
pub fn sample_without_replacement(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot draw {k} distinct indices from 0..{n}");
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + u64_below(rng, (n - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}
