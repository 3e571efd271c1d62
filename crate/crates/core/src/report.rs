//! CSV sinks. Every table has a header row and ends with a
//! `# config_hash=<hash>` comment line. Floats use Rust's shortest
//! round-trip formatting, so equal values always serialize to equal bytes.

use std::fmt::Write;

use crate::ensemble::StateVector;
use crate::filter::EssRecord;
use crate::metrics::MetricReport;
use crate::systems::Scenario;
use crate::weights::WeightTraceRow;

fn footer(out: &mut String, config_hash: &str) {
    writeln!(out, "# config_hash={config_hash}").unwrap();
}

pub fn ess_trace_csv(trace: &[EssRecord], config_hash: &str) -> String {
    let mut out = String::from("t,k,ess,did_resample\n");
    for r in trace {
        writeln!(out, "{},{},{},{}", r.t, r.k, r.ess, u8::from(r.did_resample)).unwrap();
    }
    footer(&mut out, config_hash);
    out
}

pub fn weight_trace_csv(trace: &[WeightTraceRow], config_hash: &str) -> String {
    let mut out = String::from("t,k,particle,log_beta,reward_part,girsanov_part\n");
    for r in trace {
        writeln!(out, "{},{},{},{},{},{}", r.t, r.k, r.particle, r.log_beta, r.reward_part, r.girsanov_part).unwrap();
    }
    footer(&mut out, config_hash);
    out
}

pub fn metrics_csv(rows: &[MetricReport], config_hash: &str) -> String {
    let mut out = String::from("method,scenario_seed,filter_seed,rmse,w1,ess_mean,ess_min\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method, r.scenario_seed, r.filter_seed, r.rmse, r.w1, r.ess_mean, r.ess_min
        )
        .unwrap();
    }
    footer(&mut out, config_hash);
    out
}

fn join(v: &StateVector) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Posterior means, one row per observation time: `t, x1..xD`, where row `t`
/// estimates the state observed by `y_{t+1}`.
pub fn estimates_csv(means: &[StateVector], config_hash: &str) -> String {
    let d = means.first().map_or(0, |m| m.len());
    let mut out = String::from("t");
    for i in 1..=d {
        write!(out, ",x{i}").unwrap();
    }
    out.push('\n');
    for (t, m) in means.iter().enumerate() {
        writeln!(out, "{},{}", t + 1, join(m)).unwrap();
    }
    footer(&mut out, config_hash);
    out
}

/// Scenario table `t, x1..xD, y1..yM` preceded by a `# {json}` line with the
/// system description and seed. Row `t = 0` has no observation.
pub fn scenario_csv(scenario: &Scenario, config_hash: &str) -> String {
    let header = serde_json::json!({
        "system": scenario.system.describe(),
        "seed": scenario.seed,
        "steps": scenario.steps(),
    });
    let d = scenario.truth[0].len();
    let m = scenario.observations.first().map_or(0, |y| y.len());
    let mut out = format!("# {header}\nt");
    for i in 1..=d {
        write!(out, ",x{i}").unwrap();
    }
    for j in 1..=m {
        write!(out, ",y{j}").unwrap();
    }
    out.push('\n');
    for (t, x) in scenario.truth.iter().enumerate() {
        write!(out, "{},{}", t, join(x)).unwrap();
        if t == 0 {
            out.push_str(&",".repeat(m));
        } else {
            write!(out, ",{}", join(&scenario.observations[t - 1])).unwrap();
        }
        out.push('\n');
    }
    footer(&mut out, config_hash);
    out
}
