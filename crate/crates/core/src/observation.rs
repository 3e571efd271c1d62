//! Observation operators with diagonal Gaussian noise.
//!
//! `y = A(x) + ε`, `ε ~ N(0, diag(γ²))`. The log-likelihood `R(x) = log p(y | x)`
//! and its gradient `J_A(x)ᵀ diag(γ⁻²)(y − A(x))` are computed analytically.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::StateVector;
use crate::error::{Result, SurgeError};

#[derive(Debug, Clone, PartialEq)]
pub enum ObservationOperator {
    /// `A(x) = H x`.
    Linear(DMatrix<f64>),
    /// `A(x) = arctan(x[index])`, a single scalar observation.
    ArctanComponent { state_dim: usize, index: usize },
}

impl ObservationOperator {
    pub fn state_dim(&self) -> usize {
        match self {
            Self::Linear(h) => h.ncols(),
            Self::ArctanComponent { state_dim, .. } => *state_dim,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Self::Linear(h) => h.nrows(),
            Self::ArctanComponent { .. } => 1,
        }
    }

    pub fn apply(&self, x: &StateVector) -> DVector<f64> {
        match self {
            Self::Linear(h) => h * x,
            Self::ArctanComponent { index, .. } => DVector::from_element(1, x[*index].atan()),
        }
    }

    /// Jacobian `∂A/∂x` at `x`, `M × D`.
    pub fn jacobian(&self, x: &StateVector) -> DMatrix<f64> {
        match self {
            Self::Linear(h) => h.clone(),
            Self::ArctanComponent { state_dim, index } => {
                let mut j = DMatrix::zeros(1, *state_dim);
                j[(0, *index)] = 1.0 / (1.0 + x[*index] * x[*index]);
                j
            }
        }
    }

    /// `J_A(x)ᵀ r` without forming the Jacobian for the arctan operator.
    fn jacobian_transpose_apply(&self, x: &StateVector, r: &DVector<f64>) -> StateVector {
        match self {
            Self::Linear(h) => h.tr_mul(r),
            Self::ArctanComponent { state_dim, index } => {
                let mut g = StateVector::zeros(*state_dim);
                g[*index] = r[0] / (1.0 + x[*index] * x[*index]);
                g
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    operator: ObservationOperator,
    noise_std: DVector<f64>,
    log_norm: f64,
}

impl ObservationModel {
    pub fn new(operator: ObservationOperator, noise_std: DVector<f64>) -> Result<Self> {
        if noise_std.len() != operator.obs_dim() {
            return Err(SurgeError::DimensionMismatch {
                context: "observation noise",
                expected: operator.obs_dim(),
                got: noise_std.len(),
            });
        }
        if noise_std.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err(SurgeError::InvalidParameter(
                "observation noise std must be finite and > 0".into(),
            ));
        }
        if let ObservationOperator::ArctanComponent { state_dim, index } = operator {
            if index >= state_dim {
                return Err(SurgeError::InvalidParameter(format!(
                    "observed index {index} out of range for state dim {state_dim}"
                )));
            }
        }
        let log_norm = noise_std.iter().map(|g| (g * (2.0 * PI).sqrt()).ln()).sum();
        Ok(Self {
            operator,
            noise_std,
            log_norm,
        })
    }

    /// Linear operator `H` with i.i.d. noise `γ` on every component.
    pub fn linear(h: DMatrix<f64>, gamma: f64) -> Result<Self> {
        let m = h.nrows();
        Self::new(ObservationOperator::Linear(h), DVector::from_element(m, gamma))
    }

    pub fn operator(&self) -> &ObservationOperator {
        &self.operator
    }

    pub fn noise_std(&self) -> &DVector<f64> {
        &self.noise_std
    }

    pub fn obs_dim(&self) -> usize {
        self.operator.obs_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.operator.state_dim()
    }

    /// `diag(γ²)`
    pub fn noise_cov(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.noise_std.map(|g| g * g))
    }

    fn check_dims(&self, y: &DVector<f64>, x: &StateVector) -> Result<()> {
        if y.len() != self.obs_dim() {
            return Err(SurgeError::DimensionMismatch {
                context: "observation",
                expected: self.obs_dim(),
                got: y.len(),
            });
        }
        if x.len() != self.state_dim() {
            return Err(SurgeError::DimensionMismatch {
                context: "state",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn whitened_residual(&self, y: &DVector<f64>, x: &StateVector) -> DVector<f64> {
        (y - self.operator.apply(x)).component_div(&self.noise_std)
    }

    /// `R(x) = log p(y | x)`.
    pub fn log_likelihood(&self, y: &DVector<f64>, x: &StateVector) -> Result<f64> {
        self.check_dims(y, x)?;
        Ok(-0.5 * self.whitened_residual(y, x).norm_squared() - self.log_norm)
    }

    /// `∇_x log p(y | x)`.
    pub fn grad_log_likelihood(&self, y: &DVector<f64>, x: &StateVector) -> Result<StateVector> {
        self.check_dims(y, x)?;
        let scaled = (y - self.operator.apply(x))
            .component_div(&self.noise_std)
            .component_div(&self.noise_std);
        Ok(self.operator.jacobian_transpose_apply(x, &scaled))
    }
}

/// Observes `arctan(x₁)` of a three-dimensional state with noise `γ`.
pub fn make_arctan_partial_model(gamma: f64) -> Result<ObservationModel> {
    if !(gamma > 0.0) {
        return Err(SurgeError::InvalidParameter(format!("gamma must be > 0, got {gamma}")));
    }
    ObservationModel::new(
        ObservationOperator::ArctanComponent {
            state_dim: 3,
            index: 0,
        },
        DVector::from_element(1, gamma),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_4;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn zero_residual_log_likelihood() {
        let m = ObservationModel::linear(DMatrix::identity(1, 1), 1.0).unwrap();
        let ll = m.log_likelihood(&v(&[0.3]), &v(&[0.3])).unwrap();
        assert_abs_diff_eq!(ll, -0.5 * (2.0 * PI).ln(), epsilon = 1e-15);
    }

    #[test]
    fn arctan_one_std_residual() {
        let m = make_arctan_partial_model(0.05).unwrap();
        let ll = m.log_likelihood(&v(&[0.05]), &v(&[0.0, 1.0, 2.0])).unwrap();
        let expected = -0.5 - 0.5 * (2.0 * PI * 0.05 * 0.05).ln();
        assert_abs_diff_eq!(ll, expected, epsilon = 1e-12);
    }

    #[test]
    fn arctan_operator_values() {
        let op = make_arctan_partial_model(0.05).unwrap();
        assert_eq!(op.operator().apply(&v(&[0.0, 5.0, -3.0]))[0], 0.0);
        assert_abs_diff_eq!(op.operator().apply(&v(&[1.0, 0.0, 0.0]))[0], FRAC_PI_4, epsilon = 1e-15);
    }

    #[test]
    fn linear_gradient() {
        let m = ObservationModel::linear(DMatrix::identity(2, 2), 1.0).unwrap();
        let g = m.grad_log_likelihood(&v(&[1.0, 2.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(g, v(&[1.0, 2.0]));
    }

    #[test]
    fn arctan_gradient_at_origin() {
        let m = make_arctan_partial_model(0.05).unwrap();
        let g = m.grad_log_likelihood(&v(&[0.1]), &v(&[0.0, 3.0, -1.0])).unwrap();
        assert_abs_diff_eq!(g[0], 40.0, epsilon = 1e-10);
        assert_eq!(g[1], 0.0);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn invalid_models() {
        assert!(make_arctan_partial_model(0.0).is_err());
        assert!(make_arctan_partial_model(-1.0).is_err());
        let m = make_arctan_partial_model(0.05).unwrap();
        assert!(matches!(
            m.log_likelihood(&v(&[0.0, 1.0]), &v(&[0.0, 0.0, 0.0])),
            Err(SurgeError::DimensionMismatch { .. })
        ));
        assert!(m.log_likelihood(&v(&[0.0]), &v(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn log_likelihood_peaks_where_operator_matches() {
        let m = make_arctan_partial_model(0.05).unwrap();
        let y = v(&[0.4]);
        let best = v(&[0.4f64.tan(), 7.0, 1.0]);
        let peak = m.log_likelihood(&y, &best).unwrap();
        for dx in [-0.1, -0.01, 0.01, 0.1] {
            let mut x = best.clone();
            x[0] += dx;
            assert!(m.log_likelihood(&y, &x).unwrap() < peak);
        }
        let mut other = best.clone();
        other[1] = -30.0;
        assert_abs_diff_eq!(m.log_likelihood(&y, &other).unwrap(), peak, epsilon = 1e-12);
    }
}
