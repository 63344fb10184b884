use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};

/// Deterministic random stream identified by `(seed, stream)`.
///
/// Backed by ChaCha8, whose native 64-bit stream counter gives independent
/// sequences for distinct stream ids under the same seed.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Child stream for a sub-task (trial index, component name hash, ...).
    ///
    /// Depends only on `(seed, stream, key)`, never on how much of `self` has
    /// been consumed, so per-trial results do not depend on scheduling.
    pub fn derive(&self, key: u64) -> Self {
        Self::new(self.seed, splitmix64(self.stream ^ splitmix64(key.wrapping_add(0x5851_f42d))))
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// `n` i.i.d. draws from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return invalid(format!("uniform range needs finite lo < hi, got [{lo}, {hi})"));
        }
        let dist = Uniform::new(lo, hi).map_err(|e| crate::Error::Validation(e.to_string()))?;
        Ok((0..n).map(|_| dist.sample(&mut self.inner)).collect())
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `amount` distinct indices from `0..n`, in random order.
    pub fn sample_indices(&mut self, n: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, amount).into_vec()
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

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stable 64-bit key for a label, for use with [`RngStream::derive`].
pub fn stream_key(label: &str) -> u64 {
    // FNV-1a
    label.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_moments() {
        let mut rng = RngStream::new(1, 0);
        let xs = rng.uniform(0.0, 1.0, 100_000).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
        assert!(xs.iter().all(|&x| (0.0..1.0).contains(&x)));

        let ys = rng.uniform(-1.0, 1.0, 100_000).unwrap();
        let m = ys.iter().sum::<f64>() / ys.len() as f64;
        let var = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (ys.len() - 1) as f64;
        assert!((var - 1.0 / 3.0).abs() < 0.05 / 3.0);
    }

    #[test]
    fn rejects_empty_range() {
        let mut rng = RngStream::new(1, 0);
        assert!(rng.uniform(1.0, 1.0, 3).is_err());
        assert!(rng.uniform(2.0, 1.0, 3).is_err());
    }

    #[test]
    fn reproducible_streams() {
        let a: Vec<u64> = {
            let mut r = RngStream::new(42, 7);
            (0..10_000).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = RngStream::new(42, 7);
            (0..10_000).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        let mut c = RngStream::new(42, 8);
        assert_ne!(a[..16], (0..16).map(|_| c.next_u64()).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let mut a = RngStream::new(5, 1);
        let mut b = RngStream::new(5, 2);
        let n = 50_000;
        let xs: Vec<f64> = (0..n).map(|_| a.next_f64() - 0.5).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.next_f64() - 0.5).collect();
        let corr = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / (n as f64 / 12.0);
        // standard error of the sample correlation is 1/√n ≈ 0.0045
        assert!(corr.abs() < 0.025, "{corr}");
    }

    #[test]
    fn derive_ignores_consumption() {
        let base = RngStream::new(3, 0);
        let mut used = base.clone();
        used.next_u64();
        assert_eq!(base.derive(9).clone().next_u64(), used.derive(9).next_u64());
        assert_ne!(base.derive(9).next_u64(), base.derive(10).next_u64());
    }
}
