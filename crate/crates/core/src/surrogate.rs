//! Conditional diffusion transitions `dx_s = v(x_s, s | x_t) ds + Σ^{1/2}(s) dW_s`
//! over internal time `s ∈ [0, 1]`.
//!
//! [`GaussianBridgeSurrogate`] realizes a Gaussian kernel `N(m(x_t), Q)` in
//! closed form: starting at `x_t` with the constant drift `m(x_t) - x_t` and
//! constant diffusion `Q`, the state at `s = 1` is exactly `N(m(x_t), Q)`,
//! and so is the Euler–Maruyama endpoint for any number of steps.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::ensemble::StateVector;
use crate::error::{Result, SurgeError};
use crate::systems::{lorenz_map, LorenzParams};

/// Relative eigenvalue tolerance below which a covariance is still treated as
/// PSD (and clamped).
const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
enum ScheduleRepr {
    Isotropic { variance: f64, std: f64 },
    Full { cov: DMatrix<f64>, sqrt: DMatrix<f64> },
}

/// The diffusion covariance `Σ(s)`. Constant over internal time.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    dim: usize,
    repr: ScheduleRepr,
}

/// Symmetric PSD square root of `m`, clamping eigenvalues within tolerance of zero.
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(SurgeError::DimensionMismatch {
            context: "covariance (square)",
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SurgeError::InvalidParameter("covariance has non-finite entries".into()));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(SurgeError::InvalidParameter("covariance is not symmetric".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE * scale {
        return Err(SurgeError::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

impl VarianceSchedule {
    /// `Σ(s) = σ² I`.
    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(SurgeError::InvalidParameter(format!(
                "isotropic variance must be finite and >= 0, got {variance}"
            )));
        }
        Ok(Self {
            dim,
            repr: ScheduleRepr::Isotropic {
                variance,
                std: variance.sqrt(),
            },
        })
    }

    /// `Σ(s) = cov`, which must be symmetric PSD.
    pub fn constant(cov: DMatrix<f64>) -> Result<Self> {
        let sqrt = psd_sqrt(&cov)?;
        Ok(Self {
            dim: cov.nrows(),
            repr: ScheduleRepr::Full { cov, sqrt },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn covariance(&self, _s: f64) -> DMatrix<f64> {
        match &self.repr {
            ScheduleRepr::Isotropic { variance, .. } => DMatrix::identity(self.dim, self.dim) * *variance,
            ScheduleRepr::Full { cov, .. } => cov.clone(),
        }
    }

    /// `Σ(s) v`
    pub fn apply(&self, _s: f64, v: &StateVector) -> StateVector {
        match &self.repr {
            ScheduleRepr::Isotropic { variance, .. } => v * *variance,
            ScheduleRepr::Full { cov, .. } => cov * v,
        }
    }

    /// `Σ^{1/2}(s) v` with the symmetric square root.
    pub fn sqrt_apply(&self, _s: f64, v: &StateVector) -> StateVector {
        match &self.repr {
            ScheduleRepr::Isotropic { std, .. } => v * *std,
            ScheduleRepr::Full { sqrt, .. } => sqrt * v,
        }
    }
}

/// A conditional diffusion realizing `p(x_{t+1} | x_t)`.
pub trait TransitionSurrogate: Send + Sync {
    fn dim(&self) -> usize;

    /// `v(x, s | x_t)`.
    fn drift(&self, x: &StateVector, s: f64, cond: &StateVector) -> StateVector;

    fn schedule(&self) -> &VarianceSchedule;

    /// `∂v/∂x` at `(x, s | x_t)`. Defaults to central finite differences;
    /// surrogates with a known Jacobian should override it.
    fn drift_jacobian(&self, x: &StateVector, s: f64, cond: &StateVector) -> DMatrix<f64> {
        let d = x.len();
        let mut jac = DMatrix::zeros(d, d);
        for j in 0..d {
            let step = 1e-6 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            let col = (self.drift(&xp, s, cond) - self.drift(&xm, s, cond)) / (2.0 * step);
            jac.set_column(j, &col);
        }
        jac
    }
}

pub type MeanMap = Arc<dyn Fn(&StateVector) -> StateVector + Send + Sync>;

/// Constant-drift bridge with exact endpoint law `N(m(x_t), Q)`.
#[derive(Clone)]
pub struct GaussianBridgeSurrogate {
    mean_map: MeanMap,
    endpoint_cov: DMatrix<f64>,
    schedule: VarianceSchedule,
}

impl fmt::Debug for GaussianBridgeSurrogate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaussianBridgeSurrogate")
            .field("endpoint_cov", &self.endpoint_cov)
            .finish_non_exhaustive()
    }
}

impl GaussianBridgeSurrogate {
    pub fn new(mean_map: MeanMap, endpoint_cov: DMatrix<f64>) -> Result<Self> {
        let schedule = VarianceSchedule::constant(endpoint_cov.clone())?;
        Ok(Self {
            mean_map,
            endpoint_cov,
            schedule,
        })
    }

    /// Same as [`new`](Self::new) for `Q = variance · I`.
    pub fn isotropic(mean_map: MeanMap, dim: usize, variance: f64) -> Result<Self> {
        let schedule = VarianceSchedule::isotropic(dim, variance)?;
        Ok(Self {
            mean_map,
            endpoint_cov: DMatrix::identity(dim, dim) * variance,
            schedule,
        })
    }

    /// `m(x_t)`, the mean of the exact endpoint law.
    pub fn endpoint_mean(&self, cond: &StateVector) -> StateVector {
        (self.mean_map)(cond)
    }

    pub fn endpoint_cov(&self) -> &DMatrix<f64> {
        &self.endpoint_cov
    }
}

impl TransitionSurrogate for GaussianBridgeSurrogate {
    fn dim(&self) -> usize {
        self.schedule.dim()
    }

    fn drift(&self, _x: &StateVector, _s: f64, cond: &StateVector) -> StateVector {
        self.endpoint_mean(cond) - cond
    }

    fn schedule(&self) -> &VarianceSchedule {
        &self.schedule
    }

    fn drift_jacobian(&self, x: &StateVector, _s: f64, _cond: &StateVector) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
}

/// A surrogate backed by an arbitrary drift closure, e.g. a learned network.
pub struct DriftSurrogate<F> {
    drift: F,
    schedule: VarianceSchedule,
}

impl<F> DriftSurrogate<F>
where
    F: Fn(&StateVector, f64, &StateVector) -> StateVector + Send + Sync,
{
    pub fn new(drift: F, schedule: VarianceSchedule) -> Self {
        Self { drift, schedule }
    }
}

impl<F> TransitionSurrogate for DriftSurrogate<F>
where
    F: Fn(&StateVector, f64, &StateVector) -> StateVector + Send + Sync,
{
    fn dim(&self) -> usize {
        self.schedule.dim()
    }

    fn drift(&self, x: &StateVector, s: f64, cond: &StateVector) -> StateVector {
        (self.drift)(x, s, cond)
    }

    fn schedule(&self) -> &VarianceSchedule {
        &self.schedule
    }
}

/// Bridge for the linear-Gaussian transition `N(A x_t, Q)`.
pub fn make_linear_gaussian_surrogate(
    a: DMatrix<f64>,
    q: DMatrix<f64>,
) -> Result<GaussianBridgeSurrogate> {
    if !a.is_square() || a.nrows() != q.nrows() {
        return Err(SurgeError::DimensionMismatch {
            context: "transition matrix",
            expected: q.nrows(),
            got: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(SurgeError::InvalidParameter("transition matrix has non-finite entries".into()));
    }
    GaussianBridgeSurrogate::new(Arc::new(move |x: &StateVector| &a * x), q)
}

/// Bridge whose mean map is the RK4 flow of Lorenz-63 over one assimilation
/// interval `h`, with endpoint covariance `noise_std² I₃`.
pub fn make_lorenz_surrogate(
    params: LorenzParams,
    h: f64,
    noise_std: f64,
) -> Result<GaussianBridgeSurrogate> {
    if !(h > 0.0) {
        return Err(SurgeError::InvalidParameter(format!("step size must be > 0, got {h}")));
    }
    if !(noise_std >= 0.0) {
        return Err(SurgeError::InvalidParameter(format!(
            "noise_std must be >= 0, got {noise_std}"
        )));
    }
    let params = LorenzParams {
        h,
        noise_std,
        ..params
    };
    GaussianBridgeSurrogate::isotropic(
        Arc::new(move |x: &StateVector| lorenz_map(&params, x)),
        3,
        noise_std * noise_std,
    )
}
