//! Portable pseudo-random numbers.
//!
//! Everything random in this crate (synthetic drive cycles, weight
//! initialization, minibatch shuffling, measurement noise) draws from
//! xoshiro256++ seeded through SplitMix64. All derived draws are defined
//! here in terms of raw 64-bit outputs so another implementation can
//! reproduce them exactly:
//!
//! - uniform in [0, 1): `(next_u64() >> 11) * 2^-53`
//! - uniform index in [0, k): `(next_u64() as u128 * k) >> 64`
//! - standard normal: Box-Muller, `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`,
//!   one pair of uniforms per normal (the sine branch is discarded)

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Golden-ratio increment used to derive sub-stream seeds.
const STREAM_STEP: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct PortableRng {
    inner: Xoshiro256PlusPlus,
}

impl PortableRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Independent stream for `(seed, stream)`, e.g. one per epoch.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self::new(seed ^ stream.wrapping_add(1).wrapping_mul(STREAM_STEP))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn index(&mut self, bound: usize) -> usize {
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Number of Bernoulli(p) trials up to and including the first success.
    /// Mean `1/p`, support `1, 2, ...`.
    pub fn geometric(&mut self, p: f64) -> usize {
        if p >= 1.0 {
            return 1;
        }
        let u = self.uniform();
        let k = ((1.0 - u).ln() / (1.0 - p).ln()).ceil();
        (k as usize).max(1)
    }

    /// Fisher-Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
