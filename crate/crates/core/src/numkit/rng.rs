//! Seedable counter-based random streams.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::linalg::RealVector;

/// A ChaCha8 stream identified by `(seed, stream)`.
///
/// Identical `(seed, stream)` pairs always produce identical output, and
/// [`Rng::split`] derives independent child streams without consuming state.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    /// Child stream keyed by `id`; does not advance `self`.
    pub fn split(&self, id: u64) -> Self {
        Self::with_stream(self.seed, mix(self.stream, id))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Distinct indices drawn uniformly from `0..n`, in ascending order.
    pub fn choose_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx = rand::seq::index::sample(&mut self.inner, n, k.min(n)).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// `n` i.i.d. draws from `N(mean, stddev² I)`.
pub fn sample_normal(rng: &mut Rng, mean: &[f64], stddev: f64, n: usize) -> Vec<RealVector> {
    debug_assert!(stddev >= 0.0);
    (0..n)
        .map(|_| {
            mean.iter()
                .map(|&m| m + stddev * rng.normal())
                .collect::<Vec<_>>()
                .into()
        })
        .collect()
}
