//! Seed derivation and pinned sampling primitives.
//!
//! Model files store only seeds; transforms and evaluation draws are
//! re-derived on load, so every draw that must stay bit-identical across
//! library versions goes through the helpers here (splitmix64 expansion
//! into a ChaCha8 stream, 53-bit uniform floats, Lemire bounded integers)
//! rather than through distribution code whose output could change between
//! releases.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// splitmix64 state advance + finalizer.
#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collapse a base seed and a tag path into one well-mixed seed.
/// Distinct tag paths give independent streams for the same base seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = base;
    let mut acc = splitmix64(&mut state);
    for &t in tags {
        state ^= t;
        acc ^= splitmix64(&mut state).rotate_left(17);
        let mut s2 = acc;
        acc = splitmix64(&mut s2);
    }
    acc
}

/// Deterministic ChaCha8 stream for a (base, tags) path.
pub fn stream(base: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = derive_seed(base, tags);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Uniform draw in [0, 1) with 53 random bits.
#[inline]
pub fn uniform_f64<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in [lo, hi).
#[inline]
pub fn uniform_range<R: RngCore>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform_f64(rng)
}

/// Exact uniform integer in [0, n) via widening multiply with rejection.
pub fn uniform_below<R: RngCore>(rng: &mut R, n: u64) -> u64 {
    assert!(n > 0, "uniform_below requires n > 0");
    let threshold = n.wrapping_neg() % n;
    loop {
        let wide = u128::from(rng.next_u64()) * u128::from(n);
        if (wide as u64) >= threshold {
            return (wide >> 64) as u64;
        }
    }
}

/// k distinct indices from 0..n, ascending. Floyd's algorithm, so cost
/// scales with k even when n is huge.
pub fn sample_distinct<R: RngCore>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot sample {k} distinct values from 0..{n}");
    let mut chosen = std::collections::BTreeSet::new();
    for j in (n - k)..n {
        let t = uniform_below(rng, (j + 1) as u64) as usize;
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    chosen.into_iter().collect()
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<R: RngCore, T>(rng: &mut R, xs: &mut [T]) {
    for i in (1..xs.len()).rev() {
        let j = uniform_below(rng, (i + 1) as u64) as usize;
        xs.swap(i, j);
    }
}

/// Content hash of a float slice's bit patterns; used to give each scored
/// instance an rng stream that follows the instance, not its position.
pub fn hash_f64_slice(xs: &[f64]) -> u64 {
    let mut state = 0x5CA1_AB1E_0DDB_A11 ^ (xs.len() as u64);
    let mut acc = splitmix64(&mut state);
    for x in xs {
        state ^= x.to_bits();
        acc ^= splitmix64(&mut state).rotate_left(23);
    }
    acc
}
