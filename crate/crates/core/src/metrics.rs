//! Evaluation metrics: RMSE, empirical 1-D Wasserstein distance, ESS summaries.

use serde::Serialize;

use crate::ensemble::StateVector;
use crate::error::{Result, SurgeError};
use crate::filter::EssRecord;

/// `sqrt( (1/(T·D)) Σ_t ‖x̂_t − x_t‖² )`.
pub fn rmse(estimates: &[StateVector], truth: &[StateVector]) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(SurgeError::DimensionMismatch {
            context: "rmse series length",
            expected: truth.len(),
            got: estimates.len(),
        });
    }
    if estimates.is_empty() {
        return Err(SurgeError::Empty("rmse series"));
    }
    let d = truth[0].len();
    let mut sum = 0.0;
    for (e, x) in estimates.iter().zip(truth) {
        if e.len() != d || x.len() != d {
            return Err(SurgeError::DimensionMismatch {
                context: "rmse state",
                expected: d,
                got: e.len().min(x.len()),
            });
        }
        sum += (e - x).norm_squared();
    }
    Ok((sum / (estimates.len() * d) as f64).sqrt())
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Empirical `W₁` between two 1-D samples: `∫₀¹ |F_a⁻¹(u) − F_b⁻¹(u)| du`.
/// For equal sizes this is the mean absolute difference of matched order
/// statistics.
pub fn wasserstein1_1d(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(SurgeError::Empty("wasserstein samples"));
    }
    let a = sorted(samples_a);
    let b = sorted(samples_b);
    if a.len() == b.len() {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
    }
    // Walk the merged breakpoints of both quantile functions.
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i + 1) as f64 / na;
        let next_b = (j + 1) as f64 / nb;
        let next = next_a.min(next_b);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    Ok(total)
}

/// `W₁` between estimated and true state distributions, per coordinate,
/// averaged over coordinates and time steps. `runs[r][t]` is run `r`'s
/// estimate at step `t`. With several runs each step compares the across-run
/// marginals; a single run compares the across-time marginals instead.
pub fn marginal_w1(runs: &[Vec<StateVector>], truths: &[Vec<StateVector>]) -> Result<f64> {
    if runs.is_empty() || runs.len() != truths.len() {
        return Err(SurgeError::DimensionMismatch {
            context: "w1 run count",
            expected: truths.len(),
            got: runs.len(),
        });
    }
    let steps = runs[0].len();
    if steps == 0 {
        return Err(SurgeError::Empty("w1 series"));
    }
    if runs.iter().chain(truths).any(|r| r.len() != steps) {
        return Err(SurgeError::InvalidParameter("w1 series have unequal lengths".into()));
    }
    let d = runs[0][0].len();
    let column = |set: &[Vec<StateVector>], t: Option<usize>, c: usize| -> Vec<f64> {
        match t {
            Some(t) => set.iter().map(|r| r[t][c]).collect(),
            None => set[0].iter().map(|x| x[c]).collect(),
        }
    };
    let mut total = 0.0;
    let mut count = 0usize;
    let per_step: Vec<Option<usize>> = if runs.len() > 1 { (0..steps).map(Some).collect() } else { vec![None] };
    for t in per_step {
        for c in 0..d {
            total += wasserstein1_1d(&column(runs, t, c), &column(truths, t, c))?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean and minimum of `ESS / N` over a trace.
pub fn ess_stats(trace: &[EssRecord], n_particles: usize) -> Result<(f64, f64)> {
    if trace.is_empty() {
        return Err(SurgeError::Empty("ESS trace"));
    }
    let n = n_particles as f64;
    let fractions: Vec<f64> = trace.iter().map(|r| r.ess / n).collect();
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    let min = fractions.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((mean, min))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub method: String,
    pub scenario_seed: u64,
    pub filter_seed: u64,
    pub rmse: f64,
    pub w1: f64,
    pub ess_mean: f64,
    pub ess_min: f64,
    /// Per-step RMSE over coordinates.
    pub rmse_series: Vec<f64>,
}

impl MetricReport {
    pub fn new(
        method: &str,
        scenario_seed: u64,
        filter_seed: u64,
        estimates: &[StateVector],
        truth: &[StateVector],
        ess: Option<(&[EssRecord], usize)>,
    ) -> Result<Self> {
        let rmse_series = estimates
            .iter()
            .zip(truth)
            .map(|(e, x)| rmse(std::slice::from_ref(e), std::slice::from_ref(x)))
            .collect::<Result<Vec<_>>>()?;
        let (ess_mean, ess_min) = match ess {
            Some((trace, n)) if !trace.is_empty() => ess_stats(trace, n)?,
            _ => (1.0, 1.0),
        };
        Ok(Self {
            method: method.to_string(),
            scenario_seed,
            filter_seed,
            rmse: rmse(estimates, truth)?,
            w1: marginal_w1(&[estimates.to_vec()], &[truth.to_vec()])?,
            ess_mean,
            ess_min,
            rmse_series,
        })
    }
}
