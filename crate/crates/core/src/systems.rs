//! Ground-truth generators: a linear-Gaussian state-space model and the
//! stochastic Lorenz-63 system observed through `arctan(x₁)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ensemble::{Ensemble, StateVector};
use crate::error::{Result, SurgeError};
use crate::observation::{make_arctan_partial_model, ObservationModel};
use crate::rng::{RngStream, StreamId, StreamPurpose};
use crate::surrogate::{make_linear_gaussian_surrogate, make_lorenz_surrogate, psd_sqrt, GaussianBridgeSurrogate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    /// Time between consecutive states (one assimilation interval).
    pub h: f64,
    /// RK4 sub-steps per interval.
    pub substeps: usize,
    pub noise_std: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            h: 0.05,
            substeps: 10,
            noise_std: 0.05,
        }
    }
}

impl LorenzParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(SurgeError::InvalidParameter(format!("h must be > 0, got {}", self.h)));
        }
        if !(self.noise_std >= 0.0) {
            return Err(SurgeError::InvalidParameter(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        if self.substeps == 0 {
            return Err(SurgeError::InvalidParameter("substeps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn fixed_point(&self) -> StateVector {
        let c = (self.beta * (self.rho - 1.0)).sqrt();
        StateVector::from_column_slice(&[c, c, self.rho - 1.0])
    }
}

fn lorenz_vector_field(p: &LorenzParams, x: &[f64; 3]) -> [f64; 3] {
    [
        p.sigma * (x[1] - x[0]),
        x[0] * (p.rho - x[2]) - x[1],
        x[0] * x[1] - p.beta * x[2],
    ]
}

/// One classical RK4 step of the deterministic Lorenz-63 flow.
pub fn rk4_step(p: &LorenzParams, x: &[f64; 3], dt: f64) -> [f64; 3] {
    let add = |a: &[f64; 3], b: &[f64; 3], c: f64| [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2]];
    let k1 = lorenz_vector_field(p, x);
    let k2 = lorenz_vector_field(p, &add(x, &k1, dt / 2.0));
    let k3 = lorenz_vector_field(p, &add(x, &k2, dt / 2.0));
    let k4 = lorenz_vector_field(p, &add(x, &k3, dt));
    std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Deterministic flow over one interval `h`, split into `substeps` RK4 steps.
pub fn lorenz_map(p: &LorenzParams, x: &StateVector) -> StateVector {
    let dt = p.h / p.substeps as f64;
    let mut state = [x[0], x[1], x[2]];
    for _ in 0..p.substeps {
        state = rk4_step(p, &state, dt);
    }
    StateVector::from_column_slice(&state)
}

const DIVERGENCE_BOUND: f64 = 1e6;

fn simulate_lorenz_lane(
    params: &LorenzParams,
    x0: &StateVector,
    steps: usize,
    seed: u64,
    lane: usize,
) -> Result<Vec<StateVector>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.clone());
    let mut x = x0.clone();
    for step in 0..steps {
        let noise = RngStream::new(seed, StreamPurpose::Scenario, StreamId::new(lane, step, 0)).gaussian_draw(3);
        x = lorenz_map(params, &x) + noise * params.noise_std;
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            return Err(SurgeError::Diverged { step });
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// `x_{t+1} = RK4(x_t; h) + noise_std · ζ_t`. Returns `steps + 1` states
/// starting with `x0`.
pub fn simulate_lorenz(params: &LorenzParams, x0: &StateVector, steps: usize, seed: u64) -> Result<Vec<StateVector>> {
    params.validate()?;
    if steps == 0 {
        return Err(SurgeError::InvalidParameter("T must be >= 1".into()));
    }
    simulate_lorenz_lane(params, x0, steps, seed, 0)
}

/// Linear-Gaussian system `x_{t+1} = A x_t + N(0, Q)`, `y = H x + N(0, γ² I)`,
/// `x_0 ~ N(m_0, P_0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianSystem {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub obs_std: f64,
    pub init_mean: DVector<f64>,
    pub init_cov: DMatrix<f64>,
}

impl LinearGaussianSystem {
    /// The 1-D benchmark: `A = 0.9`, `Q = 0.04`, `H = 1`, `γ = 0.05`, `x_0 ~ N(0, 1)`.
    pub fn benchmark_1d() -> Self {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        Self {
            a: m(0.9),
            q: m(0.04),
            h: m(1.0),
            obs_std: 0.05,
            init_mean: DVector::zeros(1),
            init_cov: m(1.0),
        }
    }

    pub fn obs_cov(&self) -> DMatrix<f64> {
        DMatrix::identity(self.h.nrows(), self.h.nrows()) * (self.obs_std * self.obs_std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LorenzSystem {
    pub params: LorenzParams,
    pub obs_gamma: f64,
    /// Steps discarded before recording, to start on the attractor.
    pub burn_in: usize,
    pub burn_in_start: StateVector,
    /// Spread of the initial filter ensemble around the true initial state.
    pub init_std: f64,
}

impl Default for LorenzSystem {
    fn default() -> Self {
        Self {
            params: LorenzParams::default(),
            obs_gamma: 0.05,
            burn_in: 1000,
            burn_in_start: StateVector::from_element(3, 1.0),
            init_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SystemSpec {
    LinearGaussian(LinearGaussianSystem),
    Lorenz63(LorenzSystem),
}

fn matrix_json(m: &DMatrix<f64>) -> serde_json::Value {
    json!((0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
}

impl SystemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::LinearGaussian(_) => "linear_gaussian",
            Self::Lorenz63(_) => "lorenz63",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::LinearGaussian(s) => s.a.nrows(),
            Self::Lorenz63(_) => 3,
        }
    }

    pub fn observation_model(&self) -> Result<ObservationModel> {
        match self {
            Self::LinearGaussian(s) => ObservationModel::linear(s.h.clone(), s.obs_std),
            Self::Lorenz63(s) => make_arctan_partial_model(s.obs_gamma),
        }
    }

    pub fn surrogate(&self) -> Result<GaussianBridgeSurrogate> {
        match self {
            Self::LinearGaussian(s) => make_linear_gaussian_surrogate(s.a.clone(), s.q.clone()),
            Self::Lorenz63(s) => make_lorenz_surrogate(s.params, s.params.h, s.params.noise_std),
        }
    }

    pub fn describe(&self) -> serde_json::Value {
        match self {
            Self::LinearGaussian(s) => json!({
                "system": "linear_gaussian",
                "a": matrix_json(&s.a),
                "q": matrix_json(&s.q),
                "h": matrix_json(&s.h),
                "obs_std": s.obs_std,
                "init_mean": s.init_mean.iter().copied().collect::<Vec<_>>(),
                "init_cov": matrix_json(&s.init_cov),
            }),
            Self::Lorenz63(s) => json!({
                "system": "lorenz63",
                "params": s.params,
                "obs_gamma": s.obs_gamma,
                "burn_in": s.burn_in,
                "init_std": s.init_std,
            }),
        }
    }
}

/// A true trajectory `x_0..x_T` with observations `y_1..y_T`, where
/// `observations[t]` observes `truth[t + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub truth: Vec<StateVector>,
    pub observations: Vec<DVector<f64>>,
    pub system: SystemSpec,
    pub seed: u64,
}

fn gaussian_sample(mean: &DVector<f64>, cov_sqrt: &DMatrix<f64>, stream: RngStream) -> StateVector {
    mean + cov_sqrt * stream.gaussian_draw(mean.len())
}

pub fn make_scenario(system: &SystemSpec, steps: usize, seed: u64) -> Result<Scenario> {
    if steps == 0 {
        return Err(SurgeError::InvalidParameter("T must be >= 1".into()));
    }
    let truth = match system {
        SystemSpec::LinearGaussian(s) => {
            let init_sqrt = psd_sqrt(&s.init_cov)?;
            let q_sqrt = psd_sqrt(&s.q)?;
            let scenario_stream = |t| RngStream::new(seed, StreamPurpose::Scenario, StreamId::new(0, t, 0));
            let mut x = gaussian_sample(&s.init_mean, &init_sqrt, scenario_stream(0));
            let mut truth = vec![x.clone()];
            for t in 1..=steps {
                x = &s.a * &x + &q_sqrt * scenario_stream(t).gaussian_draw(x.len());
                truth.push(x.clone());
            }
            truth
        }
        SystemSpec::Lorenz63(s) => {
            s.params.validate()?;
            let burn = simulate_lorenz_lane(&s.params, &s.burn_in_start, s.burn_in, seed, 1)?;
            let x0 = burn.last().expect("burn-in includes its start").clone();
            simulate_lorenz_lane(&s.params, &x0, steps, seed, 0)?
        }
    };
    let model = system.observation_model()?;
    let observations = truth[1..]
        .iter()
        .enumerate()
        .map(|(t, x)| {
            let eps = RngStream::new(seed, StreamPurpose::ObservationNoise, StreamId::new(0, t, 0)).gaussian_draw(model.obs_dim());
            model.operator().apply(x) + eps.component_mul(model.noise_std())
        })
        .collect();
    Ok(Scenario {
        truth,
        observations,
        system: system.clone(),
        seed,
    })
}

impl Scenario {
    pub fn steps(&self) -> usize {
        self.observations.len()
    }

    /// Draws `n` particles from the initial law: the system prior for the
    /// linear-Gaussian model, `N(x_0, init_std² I)` for Lorenz-63.
    pub fn initial_ensemble(&self, n: usize, seed: u64) -> Result<Ensemble> {
        if n == 0 {
            return Err(SurgeError::InvalidParameter("N must be >= 1".into()));
        }
        let (mean, sqrt) = match &self.system {
            SystemSpec::LinearGaussian(s) => (s.init_mean.clone(), psd_sqrt(&s.init_cov)?),
            SystemSpec::Lorenz63(s) => (self.truth[0].clone(), DMatrix::identity(3, 3) * s.init_std),
        };
        let particles = (0..n)
            .map(|i| gaussian_sample(&mean, &sqrt, RngStream::new(seed, StreamPurpose::Prior, StreamId::new(i, 0, 0))))
            .collect();
        Ensemble::uniform(particles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> StateVector {
        StateVector::from_column_slice(xs)
    }

    #[test]
    fn noiseless_fixed_point_trajectory_stays_put() {
        let p = LorenzParams {
            noise_std: 0.0,
            ..LorenzParams::default()
        };
        let fixed = p.fixed_point();
        let traj = simulate_lorenz(&p, &fixed, 200, 0).unwrap();
        for x in traj {
            assert!((x - &fixed).amax() < 1e-9);
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        // Log-log slope of the global error at time 0.5 against a fine reference.
        let p = LorenzParams::default();
        let x0 = [1.0, 1.0, 1.0];
        let integrate = |n: usize| (0..n).fold(x0, |x, _| rk4_step(&p, &x, 0.5 / n as f64));
        let reference = integrate(40_000);
        let err = |x: [f64; 3]| (0..3).map(|i| (x[i] - reference[i]).powi(2)).sum::<f64>().sqrt();
        let steps = [200usize, 400, 800];
        let errs: Vec<f64> = steps.iter().map(|&n| err(integrate(n))).collect();
        let slope = (errs[0] / errs[2]).ln() / 4f64.ln();
        assert!((3.6..=4.4).contains(&slope), "order {slope}, errors {errs:?}");
    }

    #[test]
    fn lorenz_stays_bounded() {
        let p = LorenzParams::default();
        let traj = simulate_lorenz(&p, &v(&[1.0, 1.0, 1.0]), 10_000, 3).unwrap();
        assert!(traj.iter().all(|x| x.amax() < 100.0));
    }

    #[test]
    fn divergence_is_reported() {
        let p = LorenzParams {
            h: 5.0,
            substeps: 1,
            ..LorenzParams::default()
        };
        assert!(matches!(
            simulate_lorenz(&p, &v(&[1.0, 1.0, 1.0]), 50, 0),
            Err(SurgeError::Diverged { .. })
        ));
    }

    #[test]
    fn scenarios_regenerate_bitwise() {
        for system in [
            SystemSpec::LinearGaussian(LinearGaussianSystem::benchmark_1d()),
            SystemSpec::Lorenz63(LorenzSystem::default()),
        ] {
            let a = make_scenario(&system, 15, 99).unwrap();
            let b = make_scenario(&system, 15, 99).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.truth.len(), 16);
            assert_eq!(a.observations.len(), 15);
            assert_ne!(a, make_scenario(&system, 15, 100).unwrap());
        }
    }

    #[test]
    fn lorenz_scenario_starts_after_burn_in() {
        let system = SystemSpec::Lorenz63(LorenzSystem::default());
        let sc = make_scenario(&system, 5, 1).unwrap();
        assert_ne!(sc.truth[0], v(&[1.0, 1.0, 1.0]));
    }
}
