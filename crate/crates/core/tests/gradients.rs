use nalgebra::{DMatrix, DVector};
use rand::Rng;
use surge_core::guidance::{exact_doob_guidance, GuidancePotential};
use surge_core::observation::{make_arctan_partial_model, ObservationModel, ObservationOperator};
use surge_core::rng::{RngStream, StreamId, StreamPurpose};
use surge_core::StateVector;

fn rng(lane: usize) -> rand_chacha::ChaCha8Rng {
    RngStream::new(404, StreamPurpose::Test, StreamId::new(lane, 0, 0)).generator()
}

fn central_difference(f: impl Fn(&StateVector) -> f64, x: &StateVector, h: f64) -> StateVector {
    StateVector::from_fn(x.len(), |i, _| {
        let mut up = x.clone();
        up[i] += h;
        let mut down = x.clone();
        down[i] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    })
}

fn relative_error(a: &StateVector, b: &StateVector) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1.0)
}

#[test]
fn observation_gradients_match_finite_differences() {
    let mut r = rng(0);
    let h = DMatrix::from_fn(3, 4, |_, _| r.random_range(-1.0..1.0));
    let std = DVector::from_fn(3, |_, _| r.random_range(0.2..1.0));
    let models = [
        ObservationModel::new(ObservationOperator::Linear(h), std).unwrap(),
        make_arctan_partial_model(0.05).unwrap(),
        ObservationModel::new(ObservationOperator::ArctanComponent { state_dim: 2, index: 1 }, DVector::from_element(1, 0.3)).unwrap(),
    ];
    for model in &models {
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let x = DVector::from_fn(model.state_dim(), |_, _| r.random_range(-3.0..3.0));
            let y = DVector::from_fn(model.obs_dim(), |_, _| r.random_range(-1.5..1.5));
            let analytic = model.grad_log_likelihood(&y, &x).unwrap();
            let numeric = central_difference(|z| model.log_likelihood(&y, z).unwrap(), &x, 1e-6);
            worst = worst.max(relative_error(&analytic, &numeric));
        }
        assert!(worst < 1e-5, "{:?}: relative error {worst}", model.operator());
    }
}

#[test]
fn log_likelihood_peaks_on_the_observed_preimage() {
    let model = make_arctan_partial_model(0.1).unwrap();
    let y = DVector::from_element(1, 0.4);
    // Any x with atan(x₀) = y maximizes the likelihood, whatever x₁, x₂ are.
    let best = DVector::from_vec(vec![0.4f64.tan(), 7.0, -3.0]);
    let peak = model.log_likelihood(&y, &best).unwrap();
    for dx in [-0.1, -1e-3, 1e-3, 0.1] {
        let mut x = best.clone();
        x[0] += dx;
        assert!(model.log_likelihood(&y, &x).unwrap() < peak);
    }
    assert!(model.grad_log_likelihood(&y, &best).unwrap().norm() < 1e-12);
}

#[test]
fn doob_gradient_matches_finite_differences_of_log_h() {
    let mut r = rng(1);
    let a = DMatrix::from_fn(2, 2, |_, _| r.random_range(-1.0..1.0));
    let l = DMatrix::from_fn(2, 2, |_, _| r.random_range(-0.3..0.3));
    let q = &l * l.transpose() + DMatrix::identity(2, 2) * 0.01;
    let h = DMatrix::from_fn(1, 2, |_, _| r.random_range(-1.0..1.0));
    let obs = DMatrix::from_element(1, 1, 0.05);
    let doob = exact_doob_guidance(a, q, h, obs).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let x = DVector::from_fn(2, |_, _| r.random_range(-2.0..2.0));
        let cond = DVector::from_fn(2, |_, _| r.random_range(-2.0..2.0));
        let y = DVector::from_element(1, r.random_range(-2.0..2.0));
        let s = r.random_range(0.0..1.0);
        let analytic = doob.grad(&x, s, &cond, &y);
        let numeric = central_difference(|z| doob.log_h(z, s, &cond, &y).unwrap(), &x, 1e-5);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    assert!(worst < 1e-6, "relative error {worst}");
}
