//! State vectors, weighted particle ensembles and log-domain weight
//! normalization.
//!
//! Weights are carried as log-weights everywhere and only exponentiated at
//! read-out points (ESS, resampling, posterior estimates).

use nalgebra::DVector;

use crate::error::{Result, SurgeError};

/// A point in the system state space, `R^D`.
pub type StateVector = DVector<f64>;

/// `log Σ exp(v_i)`, subtracting the largest exponent first.
///
/// Returns `-inf` when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalized weights and the log normalizer `log Σ exp(log_w)`.
///
/// Entries equal to `-inf` are allowed (zero weight) as long as at least one
/// entry is finite.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<(Vec<f64>, f64)> {
    if log_w.is_empty() {
        return Err(SurgeError::Empty("log-weights"));
    }
    if log_w.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(SurgeError::InvalidParameter(
            "log-weights contain NaN or +inf".into(),
        ));
    }
    let log_norm = log_sum_exp(log_w);
    if log_norm == f64::NEG_INFINITY {
        return Err(SurgeError::WeightCollapse { t: 0, k: 0 });
    }
    let weights = log_w.iter().map(|v| (v - log_norm).exp()).collect();
    Ok((weights, log_norm))
}

/// A set of `N` particles with per-particle log-weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<StateVector>,
    pub log_weights: Vec<f64>,
}

impl Ensemble {
    /// Builds an ensemble with uniform weights `log(1/N)`.
    pub fn uniform(particles: Vec<StateVector>) -> Result<Self> {
        if particles.is_empty() {
            return Err(SurgeError::Empty("ensemble"));
        }
        let dim = particles[0].len();
        if let Some(bad) = particles.iter().find(|p| p.len() != dim) {
            return Err(SurgeError::DimensionMismatch {
                context: "ensemble particle",
                expected: dim,
                got: bad.len(),
            });
        }
        let n = particles.len();
        Ok(Self {
            particles,
            log_weights: vec![-(n as f64).ln(); n],
        })
    }

    pub fn new(particles: Vec<StateVector>, log_weights: Vec<f64>) -> Result<Self> {
        if particles.len() != log_weights.len() {
            return Err(SurgeError::DimensionMismatch {
                context: "ensemble weights",
                expected: particles.len(),
                got: log_weights.len(),
            });
        }
        let mut ens = Self::uniform(particles)?;
        ens.log_weights = log_weights;
        Ok(ens)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles.first().map_or(0, |p| p.len())
    }

    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        normalize_log_weights(&self.log_weights).map(|(w, _)| w)
    }

    /// Replaces the log-weights by their normalized counterparts, so that
    /// `Σ exp(log_w) = 1`.
    pub fn normalize(&mut self) -> Result<f64> {
        let (_, log_norm) = normalize_log_weights(&self.log_weights)?;
        for lw in &mut self.log_weights {
            *lw -= log_norm;
        }
        Ok(log_norm)
    }

    /// Self-normalized estimate `Σ w̃_i φ(x_i)`.
    pub fn expectation<F>(&self, phi: F) -> Result<f64>
    where
        F: Fn(&StateVector) -> f64,
    {
        let w = self.normalized_weights()?;
        Ok(w
            .iter()
            .zip(&self.particles)
            .filter(|(wi, _)| **wi > 0.0)
            .map(|(wi, x)| wi * phi(x))
            .sum())
    }

    pub fn weighted_mean(&self) -> Result<StateVector> {
        let w = self.normalized_weights()?;
        let mut mean = StateVector::zeros(self.dim());
        for (wi, x) in w.iter().zip(&self.particles) {
            if *wi > 0.0 {
                mean.axpy(*wi, x, 1.0);
            }
        }
        Ok(mean)
    }

    /// Plain average of the particles, ignoring weights.
    pub fn unweighted_mean(&self) -> StateVector {
        let mut mean = StateVector::zeros(self.dim());
        for x in &self.particles {
            mean += x;
        }
        mean / self.len() as f64
    }
}
