//! Fixtures shared by the benchmarks in `benches/`.

use nalgebra::DVector;
use surge_core::{make_scenario, LorenzSystem, Scenario, StateVector, SystemSpec};

/// A short Lorenz-63 scenario and an `n`-particle initial cloud.
pub fn lorenz_fixture(steps: usize, n: usize) -> (SystemSpec, Scenario, Vec<StateVector>) {
    let spec = SystemSpec::Lorenz63(LorenzSystem::default());
    let scenario = make_scenario(&spec, steps, 11).expect("valid scenario");
    let particles = scenario.initial_ensemble(n, 5).expect("n > 0").particles;
    (spec, scenario, particles)
}

/// Log-weights with a heavy spread, so resampling has real work to do.
pub fn skewed_log_weights(n: usize) -> Vec<f64> {
    let w = DVector::from_fn(n, |i, _| -((i % 97) as f64) * 0.3);
    let lse = w.iter().map(|v| v.exp()).sum::<f64>().ln();
    w.iter().map(|v| v - lse).collect()
}
