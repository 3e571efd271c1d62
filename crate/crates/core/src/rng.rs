//! Counter-keyed random streams.
//!
//! Every random draw in the library is taken from a stream identified by
//! `(seed, purpose, particle, t, k)`. The key is mixed with splitmix64 into a
//! ChaCha8 seed, so a stream can be reconstructed in isolation and results do
//! not depend on the order in which particles are processed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ensemble::StateVector;

/// What a stream is used for. Keeps e.g. the propagation noise of particle 0
/// independent from the resampling uniforms of the same `(t, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamPurpose {
    Propagation = 1,
    Resampling = 2,
    Scenario = 3,
    Prior = 4,
    ObservationNoise = 5,
    Perturbation = 6,
    Test = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub particle: u64,
    pub t: u64,
    pub k: u64,
}

impl StreamId {
    pub fn new(particle: usize, t: usize, k: usize) -> Self {
        Self {
            particle: particle as u64,
            t: t as u64,
            k: k as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub purpose: StreamPurpose,
    pub id: StreamId,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, purpose: StreamPurpose, id: StreamId) -> Self {
        Self { seed, purpose, id }
    }

    pub fn propagation(seed: u64, particle: usize, t: usize, k: usize) -> Self {
        Self::new(seed, StreamPurpose::Propagation, StreamId::new(particle, t, k))
    }

    pub fn resampling(seed: u64, t: usize, k: usize) -> Self {
        Self::new(seed, StreamPurpose::Resampling, StreamId::new(0, t, k))
    }

    fn key(&self) -> [u8; 32] {
        let mut h = splitmix64(self.seed);
        h = splitmix64(h ^ self.purpose as u64);
        h = splitmix64(h ^ self.id.particle);
        h = splitmix64(h ^ self.id.t);
        h = splitmix64(h ^ self.id.k);
        let mut key = [0u8; 32];
        let mut word = h;
        for chunk in key.chunks_exact_mut(8) {
            word = splitmix64(word);
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        key
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn generator(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key())
    }

    /// `dim` i.i.d. standard normal variates, the first `dim` draws of the stream.
    pub fn gaussian_draw(&self, dim: usize) -> StateVector {
        let mut rng = self.generator();
        StateVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
    }

    /// `n` uniforms on `[0, 1)`.
    pub fn uniforms(&self, n: usize) -> Vec<f64> {
        let mut rng = self.generator();
        (0..n).map(|_| rng.random::<f64>()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_draws() {
        let s = RngStream::propagation(7, 0, 0, 0);
        assert_eq!(s.gaussian_draw(3), s.gaussian_draw(3));
        assert_eq!(s.gaussian_draw(3), RngStream::propagation(7, 0, 0, 0).gaussian_draw(3));
    }

    #[test]
    fn key_components_all_matter() {
        let base = RngStream::propagation(7, 1, 2, 3).gaussian_draw(4);
        assert_ne!(base, RngStream::propagation(8, 1, 2, 3).gaussian_draw(4));
        assert_ne!(base, RngStream::propagation(7, 2, 2, 3).gaussian_draw(4));
        assert_ne!(base, RngStream::propagation(7, 1, 3, 3).gaussian_draw(4));
        assert_ne!(base, RngStream::propagation(7, 1, 2, 4).gaussian_draw(4));
        let other = RngStream::new(7, StreamPurpose::Scenario, StreamId::new(1, 2, 3));
        assert_ne!(base, other.gaussian_draw(4));
    }

    #[test]
    fn moments_of_a_million_draws() {
        let n = 1_000_000;
        let x = RngStream::new(11, StreamPurpose::Test, StreamId::new(0, 0, 0)).gaussian_draw(n);
        let mean = x.mean();
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        // 4 sigma: sd(mean) = 1e-3, sd(var) = sqrt(2/n) ≈ 1.41e-3.
        assert!(mean.abs() < 4e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 6e-3, "var {var}");
    }

    #[test]
    fn neighbouring_streams_are_uncorrelated() {
        let n = 100_000;
        let a = RngStream::propagation(3, 0, 0, 0).gaussian_draw(n);
        let b = RngStream::propagation(3, 1, 0, 0).gaussian_draw(n);
        let (ma, mb) = (a.mean(), b.mean());
        let cov: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() < 0.013, "corr {corr}");
    }
}
