//! Euler–Maruyama simulation of the guided transition SDE
//! `dx = [v(x, s | x_t) + Σ(s) ∇G(x, s | y)] ds + Σ^{1/2}(s) dW`.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::ensemble::StateVector;
use crate::error::{Result, SurgeError};
use crate::guidance::GuidancePotential;
use crate::rng::{RngStream, StreamId};
use crate::surrogate::TransitionSurrogate;

/// One Euler–Maruyama step, with everything needed to recompute its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStepRecord {
    pub x_before: StateVector,
    pub x_after: StateVector,
    /// The standard-normal draw `ξ` that moved the particle.
    pub noise: StateVector,
    pub s_start: f64,
    pub s_end: f64,
    /// `∇G` evaluated at `(x_before, s_start)`.
    pub grad_g: StateVector,
}

impl PathStepRecord {
    pub fn ds(&self) -> f64 {
        self.s_end - self.s_start
    }
}

/// Internal-time grid `s_k = k / K`, `k = 0..=K`.
pub fn uniform_grid(k_steps: usize) -> Vec<f64> {
    (0..=k_steps).map(|k| k as f64 / k_steps as f64).collect()
}

/// One guided Euler–Maruyama step driven by the noise stream `rng`.
#[allow(clippy::too_many_arguments)]
pub fn em_step(
    surrogate: &dyn TransitionSurrogate,
    guidance: &dyn GuidancePotential,
    x: &StateVector,
    cond: &StateVector,
    y: &DVector<f64>,
    s_k: f64,
    ds: f64,
    rng: &RngStream,
) -> Result<PathStepRecord> {
    let noise = rng.gaussian_draw(x.len());
    em_step_with_noise(surrogate, guidance, x, cond, y, s_k, ds, noise, Some(&rng.id))
}

/// [`em_step`] with a caller-supplied standard-normal draw `ξ`. `id`, when
/// given, is attached to non-finite errors.
#[allow(clippy::too_many_arguments)]
pub fn em_step_with_noise(
    surrogate: &dyn TransitionSurrogate,
    guidance: &dyn GuidancePotential,
    x: &StateVector,
    cond: &StateVector,
    y: &DVector<f64>,
    s_k: f64,
    ds: f64,
    noise: StateVector,
    id: Option<&StreamId>,
) -> Result<PathStepRecord> {
    if !(ds > 0.0) || s_k < 0.0 || s_k + ds > 1.0 + 1e-12 {
        return Err(SurgeError::InvalidParameter(format!(
            "invalid internal step: s_k = {s_k}, ds = {ds}"
        )));
    }
    if noise.len() != x.len() {
        return Err(SurgeError::DimensionMismatch {
            context: "noise draw",
            expected: x.len(),
            got: noise.len(),
        });
    }
    let non_finite = |what| {
        let (particle, t, k) = id.map_or((0, 0, 0), |id| (id.particle as usize, id.t as usize, id.k as usize));
        SurgeError::NonFinite { what, particle, t, k }
    };
    let schedule = surrogate.schedule();
    let drift = surrogate.drift(x, s_k, cond);
    if drift.iter().any(|v| !v.is_finite()) {
        return Err(non_finite("drift"));
    }
    let grad_g = guidance.grad(x, s_k, cond, y);
    if grad_g.iter().any(|v| !v.is_finite()) {
        return Err(non_finite("guidance"));
    }
    let x_after = x
        + (drift + schedule.apply(s_k, &grad_g)) * ds
        + schedule.sqrt_apply(s_k, &noise) * ds.sqrt();
    if x_after.iter().any(|v| !v.is_finite()) {
        return Err(non_finite("state"));
    }
    Ok(PathStepRecord {
        x_before: x.clone(),
        x_after,
        noise,
        s_start: s_k,
        s_end: s_k + ds,
        grad_g,
    })
}

/// Simulates one assimilation window `s ∈ [0, 1]` with `k_steps` uniform
/// steps for every particle. Particle `i` draws its noise from the streams
/// `(seed, i, t, k)`.
#[allow(clippy::too_many_arguments)]
pub fn propagate_window(
    surrogate: &dyn TransitionSurrogate,
    guidance: &dyn GuidancePotential,
    particles: &[StateVector],
    conds: &[StateVector],
    y: &DVector<f64>,
    k_steps: usize,
    seed: u64,
    t: usize,
) -> Result<Vec<Vec<PathStepRecord>>> {
    if k_steps == 0 {
        return Err(SurgeError::InvalidParameter("K must be >= 1".into()));
    }
    if particles.len() != conds.len() {
        return Err(SurgeError::DimensionMismatch {
            context: "conditioning states",
            expected: particles.len(),
            got: conds.len(),
        });
    }
    let grid = uniform_grid(k_steps);
    particles
        .par_iter()
        .zip(conds.par_iter())
        .enumerate()
        .map(|(i, (x0, cond))| {
            let mut path = Vec::with_capacity(k_steps);
            let mut x = x0.clone();
            for k in 0..k_steps {
                let rec = em_step(
                    surrogate,
                    guidance,
                    &x,
                    cond,
                    y,
                    grid[k],
                    grid[k + 1] - grid[k],
                    &RngStream::propagation(seed, i, t, k),
                )?;
                x = rec.x_after.clone();
                path.push(rec);
            }
            Ok(path)
        })
        .collect()
}
