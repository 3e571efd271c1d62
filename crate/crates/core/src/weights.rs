//! Path-space importance weights.
//!
//! For one Euler–Maruyama step from `s_k` to `s_{k+1}` the log-increment is
//!
//! ```text
//! log β = [α(s_{k+1}) R(x_{k+1}) − α(s_k) R(x_k)] − u·(√Δs ξ) − ½‖u‖² Δs
//! ```
//!
//! with `R(x) = log p(y | x)`, `u = Σ^{1/2}(s_k) ∇G(x_k, s_k | y)` and `ξ` the
//! draw stored in the step record. With `α(0) = 0` and `α(1) = 1` the reward
//! parts of a full window telescope to `R(x₁)`, so summing increments over a
//! window reproduces the whole-step weight `R(x₁) − Σ u·√Δs ξ − ½ Σ ‖u‖² Δs`.

use nalgebra::DVector;

use crate::error::Result;
use crate::observation::ObservationModel;
use crate::propagation::PathStepRecord;
use crate::surrogate::VarianceSchedule;

/// How much of the likelihood is incorporated by internal time `s`.
pub trait RewardSchedule: Send + Sync {
    /// Must satisfy `alpha(0) = 0`, `alpha(1) = 1`.
    fn alpha(&self, s: f64) -> f64;
}

/// `α(s) = s`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearReward;

impl RewardSchedule for LinearReward {
    fn alpha(&self, s: f64) -> f64 {
        s
    }
}

/// The two parts of a log-increment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogIncrement {
    pub reward: f64,
    pub girsanov: f64,
}

impl LogIncrement {
    pub fn total(&self) -> f64 {
        self.reward + self.girsanov
    }
}

/// `α R`, treating `0 · (−∞)` as zero.
fn scaled_reward(alpha: f64, r: f64) -> f64 {
    if alpha == 0.0 {
        0.0
    } else {
        alpha * r
    }
}

/// `−u·(√Δs ξ) − ½‖u‖² Δs` for one step.
pub fn girsanov_log_term(record: &PathStepRecord, schedule: &VarianceSchedule) -> f64 {
    let ds = record.ds();
    let u = schedule.sqrt_apply(record.s_start, &record.grad_g);
    -u.dot(&record.noise) * ds.sqrt() - 0.5 * u.norm_squared() * ds
}

pub fn increment_parts(
    record: &PathStepRecord,
    model: &ObservationModel,
    y: &DVector<f64>,
    schedule: &VarianceSchedule,
    reward: &dyn RewardSchedule,
) -> Result<LogIncrement> {
    let a_end = reward.alpha(record.s_end);
    let a_start = reward.alpha(record.s_start);
    let r_end = if a_end == 0.0 { 0.0 } else { model.log_likelihood(y, &record.x_after)? };
    let r_start = if a_start == 0.0 { 0.0 } else { model.log_likelihood(y, &record.x_before)? };
    let reward = scaled_reward(a_end, r_end) - scaled_reward(a_start, r_start);
    // −∞ − (−∞) would be NaN; a zero likelihood at the end point kills the particle.
    let reward = if reward.is_nan() { f64::NEG_INFINITY } else { reward };
    Ok(LogIncrement {
        reward,
        girsanov: girsanov_log_term(record, schedule),
    })
}

/// `log β` for one step with the linear reward schedule.
pub fn incremental_log_weight(
    record: &PathStepRecord,
    model: &ObservationModel,
    y: &DVector<f64>,
    schedule: &VarianceSchedule,
) -> Result<f64> {
    increment_parts(record, model, y, schedule, &LinearReward).map(|inc| inc.total())
}

/// Log-weight of a complete window path, computed in one shot:
/// `R(x₁) − Σ_k u_k·√Δs ξ_k − ½ Σ_k ‖u_k‖² Δs`.
pub fn whole_step_log_weight(
    path: &[PathStepRecord],
    model: &ObservationModel,
    y: &DVector<f64>,
    schedule: &VarianceSchedule,
) -> Result<f64> {
    let Some(last) = path.last() else {
        return Ok(0.0);
    };
    let girsanov: f64 = path.iter().map(|rec| girsanov_log_term(rec, schedule)).sum();
    Ok(model.log_likelihood(y, &last.x_after)? + girsanov)
}

/// One row of the optional per-step weight trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightTraceRow {
    pub t: usize,
    pub k: usize,
    pub particle: usize,
    pub log_beta: f64,
    pub reward_part: f64,
    pub girsanov_part: f64,
}

/// Per-particle log-weight accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightLedger {
    pub log_w: Vec<f64>,
    history: Option<Vec<WeightTraceRow>>,
}

impl WeightLedger {
    pub fn uniform(n: usize, keep_history: bool) -> Self {
        Self {
            log_w: vec![-(n as f64).ln(); n],
            history: keep_history.then(Vec::new),
        }
    }

    pub fn len(&self) -> usize {
        self.log_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_w.is_empty()
    }

    pub fn apply(&mut self, t: usize, k: usize, increments: &[LogIncrement]) {
        debug_assert_eq!(increments.len(), self.log_w.len());
        for (i, (lw, inc)) in self.log_w.iter_mut().zip(increments).enumerate() {
            *lw += inc.total();
            if let Some(h) = &mut self.history {
                h.push(WeightTraceRow {
                    t,
                    k,
                    particle: i,
                    log_beta: inc.total(),
                    reward_part: inc.reward,
                    girsanov_part: inc.girsanov,
                });
            }
        }
    }

    /// Sets every weight to `1/N`, e.g. after resampling.
    pub fn reset_uniform(&mut self) {
        let n = self.log_w.len() as f64;
        self.log_w.iter_mut().for_each(|lw| *lw = -n.ln());
    }

    pub fn history(&self) -> Option<&[WeightTraceRow]> {
        self.history.as_deref()
    }

    pub fn take_history(&mut self) -> Vec<WeightTraceRow> {
        self.history.as_mut().map(std::mem::take).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::StateVector;
    use nalgebra::DMatrix;

    fn rec(x0: f64, x1: f64, xi: f64, g: f64, s0: f64, s1: f64) -> PathStepRecord {
        PathStepRecord {
            x_before: StateVector::from_element(1, x0),
            x_after: StateVector::from_element(1, x1),
            noise: StateVector::from_element(1, xi),
            s_start: s0,
            s_end: s1,
            grad_g: StateVector::from_element(1, g),
        }
    }

    #[test]
    fn hand_computed_girsanov_term() {
        // u = 1, Δs = 0.25, ξ = 0.5: −1·(0.5·0.5) − ½·1·0.25 = −0.375.
        let r = rec(0.0, 0.0, 0.5, 1.0, 0.25, 0.5);
        let sched = VarianceSchedule::isotropic(1, 1.0).unwrap();
        assert!((girsanov_log_term(&r, &sched) + 0.375).abs() < 1e-15);
    }

    #[test]
    fn zero_guidance_increment_is_reward_only() {
        let model = ObservationModel::linear(DMatrix::identity(1, 1), 0.5).unwrap();
        let y = DVector::from_element(1, 0.2);
        let r = rec(0.1, 0.4, -1.3, 0.0, 0.25, 0.5);
        let sched = VarianceSchedule::isotropic(1, 0.3).unwrap();
        let got = incremental_log_weight(&r, &model, &y, &sched).unwrap();
        let want = 0.5 * model.log_likelihood(&y, &r.x_after).unwrap()
            - 0.25 * model.log_likelihood(&y, &r.x_before).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn ledger_records_history() {
        let mut ledger = WeightLedger::uniform(2, true);
        let inc = [
            LogIncrement { reward: 1.0, girsanov: -0.5 },
            LogIncrement { reward: 0.0, girsanov: 0.25 },
        ];
        ledger.apply(3, 4, &inc);
        let h = ledger.history().unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h[0].log_beta, 0.5);
        assert_eq!((h[1].t, h[1].k, h[1].particle), (3, 4, 1));
        ledger.reset_uniform();
        assert_eq!(ledger.log_w, vec![-(2f64.ln()); 2]);
    }
}
