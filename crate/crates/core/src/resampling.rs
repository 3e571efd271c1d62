//! Effective sample size and resampling.

use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Result, SurgeError};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingScheme {
    Multinomial,
    Systematic,
}

impl std::str::FromStr for ResamplingScheme {
    type Err = SurgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(Self::Multinomial),
            "systematic" => Ok(Self::Systematic),
            other => Err(SurgeError::InvalidParameter(format!("unknown resampling scheme '{other}'"))),
        }
    }
}

impl std::fmt::Display for ResamplingScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Multinomial => "multinomial",
            Self::Systematic => "systematic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResamplingConfig {
    pub scheme: ResamplingScheme,
    /// Resample when `ESS < threshold_fraction · N`.
    pub threshold_fraction: f64,
}

impl ResamplingConfig {
    pub fn new(scheme: ResamplingScheme, threshold_fraction: f64) -> Result<Self> {
        if !(threshold_fraction > 0.0 && threshold_fraction <= 1.0) {
            return Err(SurgeError::InvalidParameter(format!(
                "threshold fraction must lie in (0, 1], got {threshold_fraction}"
            )));
        }
        Ok(Self {
            scheme,
            threshold_fraction,
        })
    }
}

impl Default for ResamplingConfig {
    fn default() -> Self {
        Self {
            scheme: ResamplingScheme::Systematic,
            threshold_fraction: 0.75,
        }
    }
}

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// `1 / Σ w_i²` for weights that sum to one.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(SurgeError::Empty("weights"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE || weights.iter().any(|w| *w < 0.0) {
        return Err(SurgeError::Unnormalized { sum });
    }
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    Ok(1.0 / sum_sq)
}

/// Index of the first cumulative weight exceeding `u`.
fn search(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .partition_point(|c| *c <= u)
        .min(cumulative.len() - 1)
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cum: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    // Guard against round-off leaving the last entry just below 1.
    if let Some(last) = cum.last_mut() {
        *last = f64::INFINITY;
    }
    cum
}

/// Ancestor indices for `N = weights.len()` offspring.
pub fn resample_indices(weights: &[f64], scheme: ResamplingScheme, rng: &RngStream) -> Vec<usize> {
    let n = weights.len();
    let cum = cumulative(weights);
    // A particle with exactly zero weight must never be selected.
    let pick = |u: f64| {
        let mut i = search(&cum, u);
        while weights[i] == 0.0 && i + 1 < n {
            i += 1;
        }
        i
    };
    match scheme {
        ResamplingScheme::Multinomial => rng.uniforms(n).into_iter().map(pick).collect(),
        ResamplingScheme::Systematic => {
            let offset = rng.uniforms(1)[0];
            (0..n).map(|i| pick((i as f64 + offset) / n as f64)).collect()
        }
    }
}

/// Draws `N` particles with replacement; the output carries uniform weights.
pub fn resample(ensemble: &Ensemble, scheme: ResamplingScheme, rng: &RngStream) -> Result<Ensemble> {
    let weights = ensemble.normalized_weights()?;
    let idx = resample_indices(&weights, scheme, rng);
    Ensemble::uniform(idx.into_iter().map(|i| ensemble.particles[i].clone()).collect())
}

/// Resamples iff `ESS < threshold_fraction · N`. Returns the ESS measured
/// before resampling.
pub fn maybe_resample(
    ensemble: &Ensemble,
    config: &ResamplingConfig,
    rng: &RngStream,
) -> Result<(Ensemble, bool, f64)> {
    let weights = ensemble.normalized_weights()?;
    let ess = effective_sample_size(&weights)?;
    if ess < config.threshold_fraction * ensemble.len() as f64 {
        Ok((resample(ensemble, config.scheme, rng)?, true, ess))
    } else {
        Ok((ensemble.clone(), false, ess))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::StateVector;
    use crate::rng::{StreamId, StreamPurpose};

    fn scalar_ensemble(values: &[f64], weights: &[f64]) -> Ensemble {
        Ensemble::new(
            values.iter().map(|v| StateVector::from_element(1, *v)).collect(),
            weights.iter().map(|w| w.ln()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ess_examples() {
        assert!((effective_sample_size(&[0.1; 10]).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(effective_sample_size(&[0.0, 1.0, 0.0]).unwrap(), 1.0);
        assert!((effective_sample_size(&[0.5, 0.25, 0.25]).unwrap() - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ess_rejects_unnormalized() {
        assert!(matches!(effective_sample_size(&[0.5, 0.6]), Err(SurgeError::Unnormalized { .. })));
        assert!(effective_sample_size(&[]).is_err());
    }

    #[test]
    fn threshold_must_be_a_fraction() {
        assert!(ResamplingConfig::new(ResamplingScheme::Systematic, 1.5).is_err());
        assert!(ResamplingConfig::new(ResamplingScheme::Systematic, 0.0).is_err());
        assert!(ResamplingConfig::new(ResamplingScheme::Systematic, 1.0).is_ok());
    }

    #[test]
    fn one_hot_weights_copy_the_survivor() {
        let ens = scalar_ensemble(&[3.0, 4.0, 5.0], &[1.0, 0.0, 0.0]);
        for scheme in [ResamplingScheme::Multinomial, ResamplingScheme::Systematic] {
            let out = resample(&ens, scheme, &RngStream::resampling(1, 0, 0)).unwrap();
            assert!(out.particles.iter().all(|p| p[0] == 3.0));
            let lw = -(3f64.ln());
            assert!(out.log_weights.iter().all(|w| *w == lw));
        }
    }

    #[test]
    fn systematic_with_uniform_weights_is_a_permutation() {
        let n = 17;
        let values: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let ens = scalar_ensemble(&values, &vec![1.0 / n as f64; n]);
        for seed in 0..50 {
            let out = resample(&ens, ResamplingScheme::Systematic, &RngStream::resampling(seed, 0, 0)).unwrap();
            let mut got: Vec<f64> = out.particles.iter().map(|p| p[0]).collect();
            got.sort_by(f64::total_cmp);
            assert_eq!(got, values);
        }
    }

    #[test]
    fn multinomial_counts_are_unbiased_for_uniform_weights() {
        let n = 10;
        let reps = 100_000;
        let w = vec![0.1; n];
        let mut counts = vec![0usize; n];
        for r in 0..reps {
            let rng = RngStream::new(5, StreamPurpose::Test, StreamId::new(0, r, 0));
            for i in resample_indices(&w, ResamplingScheme::Multinomial, &rng) {
                counts[i] += 1;
            }
        }
        // Copy count per slot ~ Binomial(10, 0.1): sd 0.949, 4 sd / sqrt(reps) ≈ 0.012.
        for c in counts {
            let mean = c as f64 / reps as f64;
            assert!((mean - 1.0).abs() < 0.013, "mean count {mean}");
        }
    }

    #[test]
    fn maybe_resample_respects_threshold() {
        let cfg = ResamplingConfig::new(ResamplingScheme::Systematic, 0.75).unwrap();
        let uniform = scalar_ensemble(&[1.0, 2.0, 3.0, 4.0], &[0.25; 4]);
        let (_, did, ess) = maybe_resample(&uniform, &cfg, &RngStream::resampling(0, 0, 0)).unwrap();
        assert!(!did);
        assert!((ess - 4.0).abs() < 1e-12);
        let one_hot = scalar_ensemble(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 1.0, 0.0]);
        let (out, did, ess) = maybe_resample(&one_hot, &cfg, &RngStream::resampling(0, 0, 0)).unwrap();
        assert!(did);
        assert_eq!(ess, 1.0);
        assert!(out.particles.iter().all(|p| p[0] == 3.0));
    }
}
