//! Portable seeded randomness.
//!
//! Every random decision in the pipeline (fold shuffles, epoch shuffles,
//! parameter initialization, synthetic corpora) is drawn from [`SeededRng`]:
//!
//! * generator: PCG XSL RR 128/64 (`Pcg64`), state initialized to the
//!   64-bit seed zero-extended to 128 bits, increment stream
//!   [`PCG_STREAM`];
//! * bounded integers in `[0, n)`: `(next_u64 as u128 * n as u128) >> 64`
//!   (multiply-shift, no rejection);
//! * unit floats in `[0, 1)`: `(next_u64 >> 11) * 2^-53`;
//! * shuffles: Fisher-Yates from the last index down, `j = below(i + 1)`.
//!
//! Any implementation following these four rules reproduces fold plans and
//! initial parameters bit-for-bit.

use rand_core::Rng;
use rand_pcg::Pcg64;

/// Increment (stream selector) used for every generator in the crate.
pub const PCG_STREAM: u128 = 0x0a02_bdbf_7bb3_c0a7_ac28_fa16_a64a_bf96;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: Pcg64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Pcg64::new(u128::from(seed), PCG_STREAM),
        }
    }

    /// Derives an independent child seed, e.g. one per fold or per epoch.
    pub fn derive_seed(seed: u64, salt: u64) -> u64 {
        // splitmix64 finalizer over the combined value
        let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `[0, n)`. `n` must be non-zero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform real in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit_f64()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }
}
