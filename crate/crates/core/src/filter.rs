//! The SURGE assimilation loop.
//!
//! For each observation `y_{t+1}` every particle simulates `K` guided
//! Euler–Maruyama steps conditioned on its own `x_t`. In incremental mode
//! each step multiplies the weight by `β_k` (telescoped reward plus Girsanov
//! correction) and the ensemble may be resampled after every step; in
//! whole-step mode the full path weight is applied once at `s = 1`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{log_sum_exp, Ensemble, StateVector};
use crate::error::{Result, SurgeError};
use crate::guidance::GuidancePotential;
use crate::observation::ObservationModel;
use crate::propagation::{em_step, uniform_grid};
use crate::resampling::{effective_sample_size, resample_indices, ResamplingConfig};
use crate::rng::RngStream;
use crate::surrogate::TransitionSurrogate;
use crate::weights::{increment_parts, LinearReward, LogIncrement, RewardSchedule, WeightLedger, WeightTraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Per-step weights `β_k`, resampling allowed at every internal step.
    Incremental,
    /// One path weight per window, resampling only at `s = 1`.
    WholeStep,
}

impl std::str::FromStr for WeightMode {
    type Err = SurgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "incremental" => Ok(Self::Incremental),
            "whole_step" => Ok(Self::WholeStep),
            other => Err(SurgeError::InvalidParameter(format!("unknown weight mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for WeightMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Incremental => "incremental",
            Self::WholeStep => "whole_step",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Internal Euler–Maruyama steps per assimilation window.
    pub k_steps: usize,
    pub resampling: ResamplingConfig,
    pub mode: WeightMode,
    /// Check the ESS (and possibly resample) after every internal step rather
    /// than only at the end of the window. Only meaningful in incremental mode.
    pub resample_every_k: bool,
    pub seed: u64,
    pub record_weight_trace: bool,
}

impl FilterConfig {
    pub fn new(k_steps: usize, seed: u64) -> Self {
        Self {
            k_steps,
            resampling: ResamplingConfig::default(),
            mode: WeightMode::Incremental,
            resample_every_k: true,
            seed,
            record_weight_trace: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k_steps == 0 {
            return Err(SurgeError::InvalidParameter("K must be >= 1".into()));
        }
        ResamplingConfig::new(self.resampling.scheme, self.resampling.threshold_fraction)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EssRecord {
    pub t: usize,
    pub k: usize,
    pub ess: f64,
    pub did_resample: bool,
}

/// Weighted posterior approximation of `x_{t+1}` given `y_{1:t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    /// Particles at `s = 1` with normalized log-weights, before any
    /// end-of-window resampling.
    pub ensemble: Ensemble,
    pub mean: StateVector,
    pub unweighted_mean: StateVector,
    /// Estimate of `log p(y_{t+1} | y_{1:t})`.
    pub log_normalizer: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterOutput {
    pub steps: Vec<FilterStep>,
    pub ess_trace: Vec<EssRecord>,
    pub weight_trace: Vec<WeightTraceRow>,
}

impl FilterOutput {
    pub fn means(&self) -> Vec<StateVector> {
        self.steps.iter().map(|s| s.mean.clone()).collect()
    }

    pub fn unweighted_means(&self) -> Vec<StateVector> {
        self.steps.iter().map(|s| s.unweighted_mean.clone()).collect()
    }

    pub fn n_particles(&self) -> usize {
        self.steps.first().map_or(0, |s| s.ensemble.len())
    }
}

pub(crate) fn snapshot(particles: &[StateVector], log_w: &[f64], log_normalizer: f64) -> Result<FilterStep> {
    let mut ensemble = Ensemble::new(particles.to_vec(), log_w.to_vec())?;
    ensemble.normalize()?;
    Ok(FilterStep {
        mean: ensemble.weighted_mean()?,
        unweighted_mean: ensemble.unweighted_mean(),
        ensemble,
        log_normalizer,
    })
}

pub(crate) fn check_observations(obs_model: &ObservationModel, observations: &[DVector<f64>], init: &Ensemble) -> Result<()> {
    if init.is_empty() {
        return Err(SurgeError::Empty("initial ensemble"));
    }
    if init.dim() != obs_model.state_dim() {
        return Err(SurgeError::DimensionMismatch {
            context: "initial ensemble",
            expected: obs_model.state_dim(),
            got: init.dim(),
        });
    }
    if let Some(y) = observations.iter().find(|y| y.len() != obs_model.obs_dim()) {
        return Err(SurgeError::DimensionMismatch {
            context: "observation",
            expected: obs_model.obs_dim(),
            got: y.len(),
        });
    }
    Ok(())
}

/// Runs the filter with the linear reward schedule.
pub fn surge_filter(
    surrogate: &dyn TransitionSurrogate,
    guidance: &dyn GuidancePotential,
    obs_model: &ObservationModel,
    observations: &[DVector<f64>],
    init: &Ensemble,
    config: &FilterConfig,
) -> Result<FilterOutput> {
    surge_filter_with_schedule(surrogate, guidance, obs_model, observations, init, config, &LinearReward)
}

pub fn surge_filter_with_schedule(
    surrogate: &dyn TransitionSurrogate,
    guidance: &dyn GuidancePotential,
    obs_model: &ObservationModel,
    observations: &[DVector<f64>],
    init: &Ensemble,
    config: &FilterConfig,
    reward: &dyn RewardSchedule,
) -> Result<FilterOutput> {
    config.validate()?;
    check_observations(obs_model, observations, init)?;
    let n = init.len();
    let k_steps = config.k_steps;
    let grid = uniform_grid(k_steps);
    let schedule = surrogate.schedule();
    let threshold = config.resampling.threshold_fraction * n as f64;
    let incremental = config.mode == WeightMode::Incremental;

    let mut particles = init.particles.clone();
    let mut ledger = WeightLedger::uniform(n, config.record_weight_trace);
    ledger.log_w.clone_from(&init.log_weights);
    let norm = log_sum_exp(&ledger.log_w);
    ledger.log_w.iter_mut().for_each(|w| *w -= norm);

    let mut output = FilterOutput::default();

    for (t, y) in observations.iter().enumerate() {
        let mut conds = particles.clone();
        let mut log_normalizer = 0.0;
        // Whole-step mode accumulates the Girsanov part until s = 1.
        let mut pending = vec![0.0; n];

        for k in 0..k_steps {
            let s_k = grid[k];
            let ds = grid[k + 1] - s_k;
            let last = k + 1 == k_steps;
            let moved: Vec<(StateVector, LogIncrement)> = particles
                .par_iter()
                .zip(conds.par_iter())
                .enumerate()
                .map(|(i, (x, cond))| {
                    let rng = RngStream::propagation(config.seed, i, t, k);
                    let rec = em_step(surrogate, guidance, x, cond, y, s_k, ds, &rng)?;
                    let inc = if incremental {
                        increment_parts(&rec, obs_model, y, schedule, reward)?
                    } else {
                        let girsanov = crate::weights::girsanov_log_term(&rec, schedule);
                        let reward = if last { obs_model.log_likelihood(y, &rec.x_after)? } else { 0.0 };
                        LogIncrement { reward, girsanov }
                    };
                    Ok((rec.x_after, inc))
                })
                .collect::<Result<_>>()?;

            let mut increments = Vec::with_capacity(n);
            for (i, (x, inc)) in moved.into_iter().enumerate() {
                particles[i] = x;
                increments.push(inc);
            }

            if incremental {
                ledger.apply(t, k, &increments);
            } else {
                for (p, inc) in pending.iter_mut().zip(&increments) {
                    *p += inc.girsanov;
                }
                if last {
                    let whole: Vec<LogIncrement> = increments
                        .iter()
                        .zip(&pending)
                        .map(|(inc, g)| LogIncrement { reward: inc.reward, girsanov: *g })
                        .collect();
                    ledger.apply(t, k, &whole);
                }
            }

            if incremental || last {
                if ledger.log_w.iter().any(|w| w.is_nan()) {
                    return Err(SurgeError::NonFinite { what: "log-weight", particle: ledger.log_w.iter().position(|w| w.is_nan()).unwrap_or(0), t, k });
                }
                let lse = log_sum_exp(&ledger.log_w);
                if !lse.is_finite() {
                    return Err(SurgeError::WeightCollapse { t, k });
                }
                log_normalizer += lse;
                ledger.log_w.iter_mut().for_each(|w| *w -= lse);
            }

            if last {
                output.steps.push(snapshot(&particles, &ledger.log_w, log_normalizer)?);
            }

            if last || (incremental && config.resample_every_k) {
                let weights: Vec<f64> = ledger.log_w.iter().map(|w| w.exp()).collect();
                let total: f64 = weights.iter().sum();
                let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
                let ess = effective_sample_size(&weights)?;
                let did_resample = ess < threshold;
                if did_resample {
                    let ancestors = resample_indices(&weights, config.resampling.scheme, &RngStream::resampling(config.seed, t, k));
                    particles = ancestors.iter().map(|&a| particles[a].clone()).collect();
                    conds = ancestors.iter().map(|&a| conds[a].clone()).collect();
                    ledger.reset_uniform();
                }
                output.ess_trace.push(EssRecord { t, k, ess, did_resample });
            }
        }
    }
    output.weight_trace = ledger.take_history();
    Ok(output)
}

/// Self-normalized estimate `Σ w̃_i φ(x_i)` of `E[φ(x_{t+1}) | y_{1:t+1}]`.
pub fn posterior_estimate<F>(output: &FilterOutput, t: usize, phi: F) -> Result<f64>
where
    F: Fn(&StateVector) -> f64,
{
    let step = output
        .steps
        .get(t)
        .ok_or_else(|| SurgeError::InvalidParameter(format!("t = {t} out of range (T = {})", output.steps.len())))?;
    step.ensemble.expectation(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::zero_guidance;
    use crate::resampling::ResamplingScheme;
    use crate::systems::{make_scenario, LinearGaussianSystem, SystemSpec};

    fn setup() -> (crate::surrogate::GaussianBridgeSurrogate, ObservationModel, crate::systems::Scenario) {
        let system = SystemSpec::LinearGaussian(LinearGaussianSystem::benchmark_1d());
        let scenario = make_scenario(&system, 5, 1).unwrap();
        (system.surrogate().unwrap(), system.observation_model().unwrap(), scenario)
    }

    #[test]
    fn phi_one_integrates_to_one() {
        let (sur, obs, sc) = setup();
        let init = sc.initial_ensemble(32, 0).unwrap();
        let out = surge_filter(&sur, &zero_guidance(), &obs, &sc.observations, &init, &FilterConfig::new(4, 3)).unwrap();
        for t in 0..out.steps.len() {
            assert!((posterior_estimate(&out, t, |_| 1.0).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(posterior_estimate(&out, 99, |_| 1.0).is_err());
    }

    #[test]
    fn uniform_weights_give_the_plain_mean() {
        let (sur, obs, sc) = setup();
        let init = sc.initial_ensemble(16, 0).unwrap();
        // Threshold 1.0 forces resampling at the end of every window, so the
        // ensemble entering the next window is equally weighted.
        let mut cfg = FilterConfig::new(2, 3);
        cfg.resampling = ResamplingConfig::new(ResamplingScheme::Systematic, 1.0).unwrap();
        let out = surge_filter(&sur, &zero_guidance(), &obs, &sc.observations, &init, &cfg).unwrap();
        assert!(out.ess_trace.iter().filter(|r| r.k == 1).all(|r| r.did_resample || r.ess >= 16.0 - 1e-9));
        let uniform = Ensemble::uniform(out.steps[0].ensemble.particles.clone()).unwrap();
        let est = uniform.expectation(|x| x[0]).unwrap();
        assert!((est - uniform.unweighted_mean()[0]).abs() < 1e-12);
    }

    #[test]
    fn ess_trace_has_one_row_per_step_or_window() {
        let (sur, obs, sc) = setup();
        let init = sc.initial_ensemble(8, 0).unwrap();
        let mut cfg = FilterConfig::new(4, 1);
        let out = surge_filter(&sur, &zero_guidance(), &obs, &sc.observations, &init, &cfg).unwrap();
        assert_eq!(out.ess_trace.len(), 5 * 4);
        cfg.resample_every_k = false;
        let out = surge_filter(&sur, &zero_guidance(), &obs, &sc.observations, &init, &cfg).unwrap();
        assert_eq!(out.ess_trace.len(), 5);
        assert!(out.ess_trace.iter().all(|r| r.k == 3));
    }

    #[test]
    fn zero_k_is_rejected() {
        let (sur, obs, sc) = setup();
        let init = sc.initial_ensemble(8, 0).unwrap();
        assert!(surge_filter(&sur, &zero_guidance(), &obs, &sc.observations, &init, &FilterConfig::new(0, 1)).is_err());
    }

    #[test]
    fn weight_trace_is_recorded_on_request() {
        let (sur, obs, sc) = setup();
        let init = sc.initial_ensemble(4, 0).unwrap();
        let mut cfg = FilterConfig::new(3, 1);
        cfg.record_weight_trace = true;
        let out = surge_filter(&sur, &zero_guidance(), &obs, &sc.observations, &init, &cfg).unwrap();
        assert_eq!(out.weight_trace.len(), 5 * 3 * 4);
    }
}
