use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{MerfError, Result};

/// A labelled, seeded random stream.
///
/// The generator state is derived from `SHA-256(seed || label)`, so two
/// streams with the same `(seed, label)` produce the same draws, and a child
/// stream depends only on its parent's seed and label, never on how many
/// draws the parent has made. Work that runs in parallel forks one child per
/// unit of work instead of sharing a stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    label: String,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        Self {
            seed,
            label,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// Derives an independent stream labelled `"{self.label}/{label}"`.
    pub fn child(&self, label: impl AsRef<str>) -> Self {
        Self::new(self.seed, format!("{}/{}", self.label, label.as_ref()))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn coin(&mut self) -> bool {
        self.inner.random::<bool>()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `count` i.i.d. draws from `N(mean, sd²)`.
pub fn sample_normal(rng: &mut RngStream, mean: f64, sd: f64, count: usize) -> Result<Vec<f64>> {
    if !(sd >= 0.0) || !sd.is_finite() {
        return Err(MerfError::InvalidArgument(format!(
            "standard deviation must be >= 0, got {sd}"
        )));
    }
    Ok((0..count).map(|_| mean + sd * rng.standard_normal()).collect())
}
