//! Reference methods: the exact Kalman filter, the bootstrap particle filter,
//! a stochastic ensemble Kalman filter, and the unweighted guided sampler.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::ensemble::{log_sum_exp, Ensemble, StateVector};
use crate::error::{Result, SurgeError};
use crate::filter::{check_observations, snapshot, EssRecord, FilterConfig, FilterOutput};
use crate::guidance::{zero_guidance, GuidancePotential};
use crate::observation::{ObservationModel, ObservationOperator};
use crate::propagation::propagate_window;
use crate::resampling::{effective_sample_size, resample_indices};
use crate::rng::{RngStream, StreamId, StreamPurpose};
use crate::surrogate::{psd_sqrt, TransitionSurrogate};

/// Gaussian belief `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub cov: DMatrix<f64>,
}

/// One predict/update cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanStep {
    pub predicted: KalmanState,
    pub filtered: KalmanState,
    /// `log N(y; H m⁻, H P⁻ Hᵀ + R)`.
    pub log_evidence: f64,
}

const COV_CLAMP_TOLERANCE: f64 = 1e-10;

fn clamp_psd(cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (&cov + cov.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(sym);
    }
    if min < -COV_CLAMP_TOLERANCE {
        return Err(SurgeError::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&clamped) * v.transpose())
}

pub fn kalman_step(
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
    prior: &KalmanState,
) -> Result<KalmanStep> {
    let d = a.nrows();
    if prior.mean.len() != d || h.ncols() != d || y.len() != h.nrows() {
        return Err(SurgeError::DimensionMismatch {
            context: "kalman filter",
            expected: d,
            got: prior.mean.len(),
        });
    }
    let predicted = KalmanState {
        mean: a * &prior.mean,
        cov: clamp_psd(a * &prior.cov * a.transpose() + q)?,
    };
    let innovation = y - h * &predicted.mean;
    let s = h * &predicted.cov * h.transpose() + r;
    let chol = s.clone().cholesky().ok_or(SurgeError::SingularInnovation)?;
    // K = P Hᵀ S⁻¹
    let gain = chol.solve(&(h * &predicted.cov)).transpose();
    let i_kh = DMatrix::identity(d, d) - &gain * h;
    // Joseph form keeps the covariance symmetric PSD.
    let cov = &i_kh * &predicted.cov * i_kh.transpose() + &gain * r * gain.transpose();
    let white = chol.l().solve_lower_triangular(&innovation).ok_or(SurgeError::SingularInnovation)?;
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let log_evidence = -0.5 * white.norm_squared() - 0.5 * log_det - 0.5 * y.len() as f64 * (2.0 * PI).ln();
    Ok(KalmanStep {
        filtered: KalmanState {
            mean: &predicted.mean + &gain * innovation,
            cov: clamp_psd(cov)?,
        },
        predicted,
        log_evidence,
    })
}

/// Full predict/update history.
pub fn kalman_filter_steps(
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    observations: &[DVector<f64>],
    init: &KalmanState,
) -> Result<Vec<KalmanStep>> {
    let mut state = init.clone();
    let mut out = Vec::with_capacity(observations.len());
    for y in observations {
        let step = kalman_step(a, q, h, r, y, &state)?;
        state = step.filtered.clone();
        out.push(step);
    }
    Ok(out)
}

/// Exact filtering posteriors `p(x_{t+1} | y_{1:t+1})` of a linear-Gaussian system.
pub fn kalman_filter(
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    observations: &[DVector<f64>],
    init: &KalmanState,
) -> Result<Vec<KalmanState>> {
    Ok(kalman_filter_steps(a, q, h, r, observations, init)?
        .into_iter()
        .map(|s| s.filtered)
        .collect())
}

/// Bootstrap particle filter. Proposals are drawn by simulating the
/// unguided surrogate with the same `K`-step grid and noise streams as
/// [`surge_filter`](crate::filter::surge_filter); weights are the observation
/// likelihood at the endpoint; the resampling decision is made once per
/// window.
pub fn bootstrap_pf(
    surrogate: &dyn TransitionSurrogate,
    obs_model: &ObservationModel,
    observations: &[DVector<f64>],
    init: &Ensemble,
    config: &FilterConfig,
) -> Result<FilterOutput> {
    check_observations(obs_model, observations, init)?;
    if config.k_steps == 0 {
        return Err(SurgeError::InvalidParameter("K must be >= 1".into()));
    }
    let n = init.len();
    let last_k = config.k_steps - 1;
    let mut particles = init.particles.clone();
    let mut log_w = init.log_weights.clone();
    let norm = log_sum_exp(&log_w);
    log_w.iter_mut().for_each(|w| *w -= norm);
    let mut output = FilterOutput::default();

    for (t, y) in observations.iter().enumerate() {
        let paths = propagate_window(surrogate, &zero_guidance(), &particles, &particles, y, config.k_steps, config.seed, t)?;
        particles = paths
            .into_iter()
            .map(|p| p.into_iter().last().expect("K >= 1").x_after)
            .collect();
        let loglik: Vec<f64> = particles
            .par_iter()
            .map(|x| obs_model.log_likelihood(y, x))
            .collect::<Result<_>>()?;
        for (w, l) in log_w.iter_mut().zip(&loglik) {
            *w += l;
        }
        let lse = log_sum_exp(&log_w);
        if !lse.is_finite() {
            return Err(SurgeError::WeightCollapse { t, k: last_k });
        }
        log_w.iter_mut().for_each(|w| *w -= lse);
        output.steps.push(snapshot(&particles, &log_w, lse)?);

        let weights: Vec<f64> = log_w.iter().map(|w| w.exp()).collect();
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let ess = effective_sample_size(&weights)?;
        let did_resample = ess < config.resampling.threshold_fraction * n as f64;
        if did_resample {
            let ancestors = resample_indices(&weights, config.resampling.scheme, &RngStream::resampling(config.seed, t, last_k));
            particles = ancestors.iter().map(|&a| particles[a].clone()).collect();
            log_w = vec![-(n as f64).ln(); n];
        }
        output.ess_trace.push(EssRecord { t, k: last_k, ess, did_resample });
    }
    Ok(output)
}

/// Stochastic (perturbed-observation) ensemble Kalman filter. A nonlinear
/// observation operator is linearized at the forecast mean for the gain;
/// predicted observations use the full operator.
pub fn enkf(
    surrogate: &dyn TransitionSurrogate,
    obs_model: &ObservationModel,
    observations: &[DVector<f64>],
    init: &Ensemble,
    k_steps: usize,
    seed: u64,
) -> Result<FilterOutput> {
    check_observations(obs_model, observations, init)?;
    let n = init.len();
    if n < 2 {
        return Err(SurgeError::InvalidParameter("EnKF needs at least 2 members".into()));
    }
    let r = obs_model.noise_cov();
    let r_sqrt = DMatrix::from_diagonal(obs_model.noise_std());
    let mut particles = init.particles.clone();
    let mut output = FilterOutput::default();

    for (t, y) in observations.iter().enumerate() {
        let paths = propagate_window(surrogate, &zero_guidance(), &particles, &particles, y, k_steps, seed, t)?;
        let forecast: Vec<StateVector> = paths
            .into_iter()
            .map(|p| p.into_iter().last().expect("K >= 1").x_after)
            .collect();
        let fc = Ensemble::uniform(forecast.clone())?;
        let mean = fc.unweighted_mean();
        let d = mean.len();
        let mut cov = DMatrix::zeros(d, d);
        for x in &forecast {
            let dx = x - &mean;
            cov += &dx * dx.transpose();
        }
        cov /= (n - 1) as f64;
        let h = match obs_model.operator() {
            ObservationOperator::Linear(h) => h.clone(),
            op => op.jacobian(&mean),
        };
        let s = &h * &cov * h.transpose() + &r;
        let chol = s.cholesky().ok_or(SurgeError::SingularInnovation)?;
        let gain = chol.solve(&(&h * &cov)).transpose();
        particles = forecast
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let eps = RngStream::new(seed, StreamPurpose::Perturbation, StreamId::new(i, t, 0)).gaussian_draw(y.len());
                let perturbed = y + &r_sqrt * eps;
                x + &gain * (perturbed - obs_model.operator().apply(x))
            })
            .collect();
        let uniform = vec![-(n as f64).ln(); n];
        output.steps.push(snapshot(&particles, &uniform, f64::NAN)?);
    }
    Ok(output)
}

/// Guided proposals with no importance weighting and no resampling: the
/// plain guided sampler whose bias the weighted filter removes.
pub fn guided_ensemble(
    surrogate: &dyn TransitionSurrogate,
    guidance: &dyn GuidancePotential,
    obs_model: &ObservationModel,
    observations: &[DVector<f64>],
    init: &Ensemble,
    k_steps: usize,
    seed: u64,
) -> Result<FilterOutput> {
    check_observations(obs_model, observations, init)?;
    let n = init.len();
    let uniform = vec![-(n as f64).ln(); n];
    let mut particles = init.particles.clone();
    let mut output = FilterOutput::default();
    for (t, y) in observations.iter().enumerate() {
        let paths = propagate_window(surrogate, guidance, &particles, &particles, y, k_steps, seed, t)?;
        particles = paths
            .into_iter()
            .map(|p| p.into_iter().last().expect("K >= 1").x_after)
            .collect();
        output.steps.push(snapshot(&particles, &uniform, f64::NAN)?);
    }
    Ok(output)
}

/// `N(mean, cov)` from a PSD covariance, for building initial ensembles.
pub fn gaussian_ensemble(mean: &StateVector, cov: &DMatrix<f64>, n: usize, seed: u64) -> Result<Ensemble> {
    let sqrt = psd_sqrt(cov)?;
    let particles = (0..n)
        .map(|i| mean + &sqrt * RngStream::new(seed, StreamPurpose::Prior, StreamId::new(i, 0, 0)).gaussian_draw(mean.len()))
        .collect();
    Ensemble::uniform(particles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn y1(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn single_step_matches_hand_formula() {
        // Predict: m⁻ = 0, P⁻ = 0.81 + 0.04 = 0.85.
        // Update: m⁺ = m⁻ + P⁻/(P⁻ + R) (y − m⁻), P⁺ = P⁻ R / (P⁻ + R).
        let prior = KalmanState { mean: y1(0.0), cov: m1(1.0) };
        let step = kalman_step(&m1(0.9), &m1(0.04), &m1(1.0), &m1(0.0025), &y1(1.0), &prior).unwrap();
        let p_pred = 0.9 * 0.9 * 1.0 + 0.04;
        let gain = p_pred / (p_pred + 0.0025);
        assert_abs_diff_eq!(step.predicted.cov[(0, 0)], p_pred, epsilon = 1e-15);
        assert_abs_diff_eq!(step.filtered.mean[0], gain * 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(step.filtered.cov[(0, 0)], p_pred * 0.0025 / (p_pred + 0.0025), epsilon = 1e-14);
        let s = p_pred + 0.0025;
        let want = -0.5 * (1.0 / s) - 0.5 * (2.0 * PI * s).ln();
        assert_abs_diff_eq!(step.log_evidence, want, epsilon = 1e-12);
    }

    #[test]
    fn uninformative_observation_keeps_the_prior() {
        let prior = KalmanState { mean: DVector::from_vec(vec![1.0, -1.0]), cov: DMatrix::identity(2, 2) };
        let i2 = DMatrix::identity(2, 2);
        let post = kalman_step(&i2, &(DMatrix::zeros(2, 2)), &i2, &(&i2 * 1e12), &DVector::from_vec(vec![50.0, 50.0]), &prior).unwrap();
        assert!((&post.filtered.mean - &prior.mean).amax() < 1e-9);
        assert!((&post.filtered.cov - &prior.cov).amax() < 1e-9);
    }

    #[test]
    fn exact_observation_pins_the_state() {
        let prior = KalmanState { mean: DVector::from_vec(vec![1.0, -1.0]), cov: DMatrix::identity(2, 2) };
        let i2 = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![3.0, 4.0]);
        let post = kalman_step(&i2, &(&i2 * 0.1), &i2, &(&i2 * 1e-12), &y, &prior).unwrap();
        assert!((&post.filtered.mean - &y).amax() < 1e-9);
    }

    #[test]
    fn singular_innovation_is_an_error() {
        let prior = KalmanState { mean: y1(0.0), cov: m1(0.0) };
        assert_eq!(
            kalman_step(&m1(1.0), &m1(0.0), &m1(1.0), &m1(0.0), &y1(1.0), &prior).unwrap_err(),
            SurgeError::SingularInnovation
        );
    }

    #[test]
    fn enkf_needs_two_members() {
        let sur = crate::surrogate::make_linear_gaussian_surrogate(m1(0.9), m1(0.04)).unwrap();
        let obs = ObservationModel::linear(m1(1.0), 0.05).unwrap();
        let init = Ensemble::uniform(vec![y1(0.0)]).unwrap();
        assert!(enkf(&sur, &obs, &[y1(0.0)], &init, 4, 0).is_err());
    }

    #[test]
    fn enkf_with_exact_observations_recovers_them() {
        let sur = crate::surrogate::make_linear_gaussian_surrogate(DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 0.5).unwrap();
        let obs = ObservationModel::linear(DMatrix::identity(2, 2), 1e-7).unwrap();
        let init = gaussian_ensemble(&DVector::zeros(2), &DMatrix::identity(2, 2), 200, 1).unwrap();
        let y = DVector::from_vec(vec![0.7, -0.3]);
        let out = enkf(&sur, &obs, std::slice::from_ref(&y), &init, 4, 2).unwrap();
        assert!((&out.steps[0].mean - &y).amax() < 1e-5);
    }

    #[test]
    fn bpf_with_deterministic_dynamics_and_exact_observation_collapses() {
        // Q = 0: propagation is deterministic; a very sharp likelihood picks
        // the particle closest to the observed truth.
        let sur = crate::surrogate::make_linear_gaussian_surrogate(m1(1.0), m1(0.0)).unwrap();
        let obs = ObservationModel::linear(m1(1.0), 1e-3).unwrap();
        let init = Ensemble::uniform((0..101).map(|i| y1(-1.0 + 0.02 * i as f64)).collect()).unwrap();
        let truth = 0.3;
        let out = bootstrap_pf(&sur, &obs, &[y1(truth)], &init, &FilterConfig::new(4, 0)).unwrap();
        assert!((out.steps[0].mean[0] - truth).abs() < 1e-6);
        assert!(out.ess_trace[0].ess < 1.0 + 1e-6);
    }
}
