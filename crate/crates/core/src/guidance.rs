//! Guidance potentials `G(x, s | y)`.
//!
//! The guided sampler adds `Σ(s) ∇_x G` to the surrogate drift. The filter
//! corrects for whatever bias this introduces, so any measurable `∇G` yields
//! the same target; guidance only changes how well the proposal matches it.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::StateVector;
use crate::error::{Result, SurgeError};
use crate::observation::ObservationModel;
use crate::surrogate::TransitionSurrogate;

pub trait GuidancePotential: Send + Sync {
    fn label(&self) -> &str;

    /// `∇_x G(x, s | y)` for a particle conditioned on `cond = x_t`.
    fn grad(&self, x: &StateVector, s: f64, cond: &StateVector, y: &DVector<f64>) -> StateVector;
}

/// `∇G ≡ 0`: the proposal is the unguided surrogate.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroGuidance;

pub fn zero_guidance() -> ZeroGuidance {
    ZeroGuidance
}

impl GuidancePotential for ZeroGuidance {
    fn label(&self) -> &str {
        "zero"
    }

    fn grad(&self, x: &StateVector, _s: f64, _cond: &StateVector, _y: &DVector<f64>) -> StateVector {
        StateVector::zeros(x.len())
    }
}

/// `∇G = λ (∂x̂₁/∂x)ᵀ ∇ log p(y | x̂₁)` with the deterministic endpoint
/// predictor `x̂₁ = x + v(x, s | x_t)(1 − s)`.
pub struct LikelihoodGradientGuidance {
    model: ObservationModel,
    surrogate: Arc<dyn TransitionSurrogate>,
    lambda: f64,
    label: String,
}

pub fn likelihood_gradient_guidance(
    model: ObservationModel,
    surrogate: Arc<dyn TransitionSurrogate>,
    lambda: f64,
) -> Result<LikelihoodGradientGuidance> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(SurgeError::InvalidParameter(format!(
            "guidance strength must be finite and >= 0, got {lambda}"
        )));
    }
    Ok(LikelihoodGradientGuidance {
        model,
        surrogate,
        lambda,
        label: format!("likelihood(lambda={lambda})"),
    })
}

impl LikelihoodGradientGuidance {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn predict_endpoint(&self, x: &StateVector, s: f64, cond: &StateVector) -> StateVector {
        x + self.surrogate.drift(x, s, cond) * (1.0 - s)
    }
}

impl GuidancePotential for LikelihoodGradientGuidance {
    fn label(&self) -> &str {
        &self.label
    }

    fn grad(&self, x: &StateVector, s: f64, cond: &StateVector, y: &DVector<f64>) -> StateVector {
        if self.lambda == 0.0 {
            return StateVector::zeros(x.len());
        }
        let endpoint = self.predict_endpoint(x, s, cond);
        // Dimensions were fixed at construction; a mismatch here is a caller bug.
        let g = self
            .model
            .grad_log_likelihood(y, &endpoint)
            .expect("observation and state dimensions match the guidance model");
        let jac = self.surrogate.drift_jacobian(x, s, cond);
        let g = if jac.iter().all(|v| *v == 0.0) {
            g
        } else {
            let dpred = DMatrix::identity(x.len(), x.len()) + jac * (1.0 - s);
            dpred.tr_mul(&g)
        };
        g * self.lambda
    }
}

/// Exact `∇ log h` for a linear-Gaussian system simulated with the
/// constant-drift bridge.
///
/// Under the bridge, `X₁ | X_s = x ~ N(x + v(1 − s), Q(1 − s))` with
/// `v = A x_t − x_t`, so
/// `h(x, s) = N(y; H(x + v(1 − s)), H Q (1 − s) Hᵀ + R)`.
#[derive(Debug, Clone)]
pub struct ExactDoobGuidance {
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    h: DMatrix<f64>,
    r: DMatrix<f64>,
}

pub fn exact_doob_guidance(
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    h: DMatrix<f64>,
    r: DMatrix<f64>,
) -> Result<ExactDoobGuidance> {
    let d = a.nrows();
    if !a.is_square() || q.shape() != (d, d) || h.ncols() != d || r.shape() != (h.nrows(), h.nrows()) {
        return Err(SurgeError::DimensionMismatch {
            context: "exact Doob guidance matrices",
            expected: d,
            got: h.ncols(),
        });
    }
    // The innovation covariance is smallest (and singular, if ever) at s = 1.
    if r.clone().cholesky().is_none() {
        return Err(SurgeError::SingularInnovation);
    }
    Ok(ExactDoobGuidance { a, q, h, r })
}

impl ExactDoobGuidance {
    fn predicted_endpoint(&self, x: &StateVector, s: f64, cond: &StateVector) -> StateVector {
        let v = &self.a * cond - cond;
        x + v * (1.0 - s)
    }

    fn innovation_cov(&self, s: f64) -> DMatrix<f64> {
        &self.h * &self.q * self.h.transpose() * (1.0 - s) + &self.r
    }

    /// `log h(x, s) = log E[p(y | X₁) | X_s = x]`.
    pub fn log_h(&self, x: &StateVector, s: f64, cond: &StateVector, y: &DVector<f64>) -> Result<f64> {
        let cov = self.innovation_cov(s);
        let chol = cov.clone().cholesky().ok_or(SurgeError::SingularInnovation)?;
        let resid = y - &self.h * self.predicted_endpoint(x, s, cond);
        let white = chol.l().solve_lower_triangular(&resid).ok_or(SurgeError::SingularInnovation)?;
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let m = y.len() as f64;
        Ok(-0.5 * white.norm_squared() - 0.5 * log_det - 0.5 * m * (2.0 * std::f64::consts::PI).ln())
    }
}

impl GuidancePotential for ExactDoobGuidance {
    fn label(&self) -> &str {
        "exact-doob"
    }

    fn grad(&self, x: &StateVector, s: f64, cond: &StateVector, y: &DVector<f64>) -> StateVector {
        let resid = y - &self.h * self.predicted_endpoint(x, s, cond);
        let chol = self
            .innovation_cov(s)
            .cholesky()
            .expect("innovation covariance is positive definite (checked at construction)");
        self.h.tr_mul(&chol.solve(&resid))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::make_arctan_partial_model;
    use crate::surrogate::make_linear_gaussian_surrogate;
    use approx::assert_abs_diff_eq;

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn benchmark_doob() -> ExactDoobGuidance {
        exact_doob_guidance(m1(0.9), m1(0.04), m1(1.0), m1(0.0025)).unwrap()
    }

    #[test]
    fn zero_guidance_is_zero() {
        let g = zero_guidance().grad(&v(&[1.0, 2.0]), 0.3, &v(&[0.0, 0.0]), &v(&[5.0]));
        assert_eq!(g, v(&[0.0, 0.0]));
    }

    #[test]
    fn lambda_zero_matches_zero_guidance() {
        let sur = Arc::new(make_linear_gaussian_surrogate(m1(0.9), m1(0.04)).unwrap());
        let model = ObservationModel::linear(m1(1.0), 0.05).unwrap();
        let g = likelihood_gradient_guidance(model, sur, 0.0).unwrap();
        assert_eq!(g.grad(&v(&[0.4]), 0.2, &v(&[1.0]), &v(&[3.0])), v(&[0.0]));
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let sur = Arc::new(make_linear_gaussian_surrogate(m1(0.9), m1(0.04)).unwrap());
        let model = ObservationModel::linear(m1(1.0), 0.05).unwrap();
        assert!(likelihood_gradient_guidance(model, sur, -1.0).is_err());
    }

    #[test]
    fn likelihood_guidance_at_s_one_is_plain_likelihood_gradient() {
        let sur = Arc::new(make_linear_gaussian_surrogate(m1(0.9), m1(0.04)).unwrap());
        let model = ObservationModel::linear(m1(1.0), 0.05).unwrap();
        let g = likelihood_gradient_guidance(model.clone(), sur, 1.5).unwrap();
        let x = v(&[0.3]);
        let y = v(&[0.5]);
        let got = g.grad(&x, 1.0, &v(&[2.0]), &y);
        let want = model.grad_log_likelihood(&y, &x).unwrap() * 1.5;
        assert_abs_diff_eq!(got[0], want[0], epsilon = 1e-12);
    }

    #[test]
    fn likelihood_guidance_uses_endpoint_prediction() {
        let sur = Arc::new(make_linear_gaussian_surrogate(m1(0.9), m1(0.04)).unwrap());
        let model = ObservationModel::linear(m1(1.0), 0.05).unwrap();
        let g = likelihood_gradient_guidance(model.clone(), sur, 1.0).unwrap();
        // x_t = 2 → v = -0.2; at s = 0.5, x = 1.0 → x̂₁ = 0.9.
        let got = g.grad(&v(&[1.0]), 0.5, &v(&[2.0]), &v(&[1.0]));
        assert_abs_diff_eq!(got[0], 0.1 / 0.0025, epsilon = 1e-9);
    }

    #[test]
    fn doob_limit_at_s_one() {
        let g = benchmark_doob();
        let x = v(&[0.7]);
        let y = v(&[1.0]);
        let got = g.grad(&x, 1.0, &v(&[0.2]), &y);
        assert_abs_diff_eq!(got[0], (1.0 - 0.7) / 0.0025, epsilon = 1e-9);
    }

    #[test]
    fn doob_zero_innovation() {
        let g = benchmark_doob();
        let cond = v(&[2.0]);
        let s = 0.25;
        let x = v(&[1.5]);
        let predicted = 1.5 + (1.8 - 2.0) * 0.75;
        let got = g.grad(&x, s, &cond, &v(&[predicted]));
        assert!(got[0].abs() < 1e-12);
    }

    #[test]
    fn doob_rejects_singular_noise() {
        assert!(matches!(
            exact_doob_guidance(m1(0.9), m1(0.04), m1(1.0), m1(0.0)),
            Err(SurgeError::SingularInnovation)
        ));
    }

    #[test]
    fn guidance_with_finite_difference_jacobian() {
        // A drift that depends on x exercises the (I + (1-s) ∂v/∂x)ᵀ factor.
        use crate::surrogate::{DriftSurrogate, VarianceSchedule};
        let sur = Arc::new(DriftSurrogate::new(
            |x: &StateVector, _s: f64, _c: &StateVector| -x.clone(),
            VarianceSchedule::isotropic(3, 0.01).unwrap(),
        ));
        let model = make_arctan_partial_model(0.05).unwrap();
        let g = likelihood_gradient_guidance(model.clone(), sur, 1.0).unwrap();
        let x = v(&[0.4, 1.0, -1.0]);
        let s = 0.25;
        let y = v(&[0.1]);
        // x̂₁ = x - x(1-s) = s x, so ∂x̂₁/∂x = s I.
        let endpoint = &x * s;
        let want = model.grad_log_likelihood(&y, &endpoint).unwrap() * s;
        let got = g.grad(&x, s, &v(&[0.0, 0.0, 0.0]), &y);
        assert!((got - want).amax() < 1e-6);
    }
}
