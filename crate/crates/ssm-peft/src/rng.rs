//! Deterministic seeded randomness.
//!
//! All stochastic choices in the crate (initialization, data generation,
//! dropout) flow through [`RngStream`], a counter-based ChaCha12 stream that
//! is fully determined by its 64-bit seed. Identical seeds and draw order
//! give bit-identical results on every platform.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::Normal;

use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, rng: ChaCha12Rng::seed_from_u64(seed) }
    }

    /// Independent substream for a parallel task. Substreams never collide
    /// with each other or with the parent regardless of how many values each
    /// one consumes.
    pub fn substream(&self, index: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(index.wrapping_add(1));
        RngStream { seed: self.seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Position of the stream counter, exposed for diagnostics.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Tensor of uniform draws from `[low, high)`.
    pub fn uniform(&mut self, shape: &[usize], low: f64, high: f64) -> Result<Tensor> {
        if !(low < high) {
            return Err(TensorError::BadDistribution(format!(
                "uniform requires low < high, got [{low}, {high})"
            )));
        }
        let dist = Uniform::new(low, high);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor::from_vec(shape.to_vec(), data)
    }

    /// Tensor of normal draws with the given mean and standard deviation.
    pub fn normal(&mut self, shape: &[usize], mean: f64, std_dev: f64) -> Result<Tensor> {
        let dist = Normal::new(mean, std_dev).map_err(|_| {
            TensorError::BadDistribution(format!("normal requires sigma >= 0, got {std_dev}"))
        })?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor::from_vec(shape.to_vec(), data)
    }

    /// Tensor of integers drawn uniformly from `[low, high)`, stored as floats.
    pub fn integers(&mut self, shape: &[usize], low: i64, high: i64) -> Result<Tensor> {
        if low >= high {
            return Err(TensorError::BadDistribution(format!(
                "empty integer range [{low}, {high})"
            )));
        }
        let dist = Uniform::new(low, high);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng) as f64).collect();
        Tensor::from_vec(shape.to_vec(), data)
    }

    /// Single uniform draw from `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Single integer draw from `[0, n)`.
    pub fn next_index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        let ta = a.normal(&[3, 4], 0.0, 1.0).unwrap();
        let tb = b.normal(&[3, 4], 0.0, 1.0).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.uniform(&[5], 0.0, 1.0).unwrap(), b.uniform(&[5], 0.0, 1.0).unwrap());
    }

    #[test]
    fn substreams_are_independent_of_consumption() {
        let root = RngStream::new(42);
        let mut s1 = root.substream(0);
        let mut s2 = root.substream(0);
        // Consuming from an unrelated substream does not disturb another.
        let _ = root.substream(1).uniform(&[100], 0.0, 1.0).unwrap();
        assert_eq!(s1.uniform(&[8], 0.0, 1.0).unwrap(), s2.uniform(&[8], 0.0, 1.0).unwrap());
    }

    #[test]
    fn integer_range_validation() {
        let mut s = RngStream::new(1);
        assert!(s.integers(&[4], 3, 3).is_err());
        assert!(s.integers(&[4], 5, 2).is_err());
        let t = s.integers(&[64], 0, 10).unwrap();
        assert!(t.iter().all(|&v| (0.0..10.0).contains(&v) && v.fract() == 0.0));
    }

    #[test]
    fn negative_sigma_rejected() {
        let mut s = RngStream::new(1);
        assert!(s.normal(&[2], 0.0, -1.0).is_err());
    }

    #[test]
    fn uniform_sample_mean_near_half() {
        let mut s = RngStream::new(123);
        let t = s.uniform(&[100_000], 0.0, 1.0).unwrap();
        let mean: f64 = t.iter().sum::<f64>() / t.numel() as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }
}
