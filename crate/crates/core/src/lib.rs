//! Sequential Monte Carlo for diffusion-surrogate transition models.
//!
//! Particles are propagated with a guided Euler–Maruyama sampler and
//! reweighted on path space with Girsanov importance weights, so that the
//! weighted ensemble targets the exact filtering posterior whatever guidance
//! is used. The likelihood is folded in gradually along the internal
//! diffusion time, and particles are resampled whenever the effective sample
//! size drops below a threshold.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod baselines;
pub mod ensemble;
pub mod error;
pub mod filter;
pub mod guidance;
pub mod metrics;
pub mod observation;
pub mod propagation;
pub mod report;
pub mod resampling;
pub mod rng;
pub mod stats;
pub mod surrogate;
pub mod systems;
pub mod weights;

pub use ensemble::{normalize_log_weights, Ensemble, StateVector};
pub use error::{Result, SurgeError};
pub use filter::{posterior_estimate, surge_filter, FilterConfig, FilterOutput, WeightMode};
pub use guidance::{exact_doob_guidance, likelihood_gradient_guidance, zero_guidance, GuidancePotential};
pub use observation::{make_arctan_partial_model, ObservationModel};
pub use resampling::{ResamplingConfig, ResamplingScheme};
pub use rng::RngStream;
pub use surrogate::{make_linear_gaussian_surrogate, make_lorenz_surrogate, GaussianBridgeSurrogate, TransitionSurrogate};
pub use systems::{make_scenario, LinearGaussianSystem, LorenzParams, LorenzSystem, Scenario, SystemSpec};
