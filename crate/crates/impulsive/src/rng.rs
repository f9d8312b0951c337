//! Deterministic randomness.
//!
//! Every random draw in the crate flows from a single 64-bit seed through a
//! counter-based ChaCha generator. Each purpose gets its own stream, so
//! adding draws to one consumer never perturbs another and parallel callers
//! can pre-draw sequentially and fan out.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Stream identifiers. Keep these stable: reports and golden outputs
/// depend on them.
pub mod purpose {
    pub const HYPOTHESIS: u64 = 1;
    pub const LIPSCHITZ: u64 = 2;
    pub const SEARCH: u64 = 3;
    pub const CLOUD_BASE: u64 = 1000;
}

/// A ChaCha generator pinned to (seed, stream).
pub fn stream(seed: u64, purpose: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

/// Uniform point in the box `[lo, hi]`.
pub fn uniform_in(rng: &mut ChaCha12Rng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(&a, &b)| if a == b { a } else { rng.gen_range(a..=b) })
        .collect()
}

const HALTON_BASES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

/// Van der Corput radical inverse in the given base.
pub fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// `index`-th Halton point scaled into the box `[lo, hi]` (1-based index
/// avoids the all-zeros first point).
pub fn halton_point(index: usize, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    assert!(lo.len() <= HALTON_BASES.len(), "halton dimension too large");
    lo.iter()
        .zip(hi)
        .enumerate()
        .map(|(d, (&a, &b))| {
            a + (b - a) * radical_inverse(index as u64 + 1, HALTON_BASES[d])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let mut a1 = stream(42, 1);
        let mut a2 = stream(42, 1);
        let mut b = stream(42, 2);
        let xs1: Vec<u64> = (0..8).map(|_| a1.gen()).collect();
        let xs2: Vec<u64> = (0..8).map(|_| a2.gen()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.gen()).collect();
        assert_eq!(xs1, xs2);
        assert_ne!(xs1, ys);
    }

    #[test]
    fn halton_covers_box() {
        let lo = [0.0, -1.0];
        let hi = [1.0, 1.0];
        let pts: Vec<Vec<f64>> = (0..64).map(|i| halton_point(i, &lo, &hi)).collect();
        for p in &pts {
            assert!(p[0] >= 0.0 && p[0] <= 1.0);
            assert!(p[1] >= -1.0 && p[1] <= 1.0);
        }
        // Crude equidistribution check on the first axis.
        let mean = pts.iter().map(|p| p[0]).sum::<f64>() / 64.0;
        assert!((mean - 0.5).abs() < 0.05);
    }
}
