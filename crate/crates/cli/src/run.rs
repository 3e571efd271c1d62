//! Building the scenario and method stack for one experiment, and writing
//! its CSV reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use surge_core::baselines::{bootstrap_pf, enkf, guided_ensemble, kalman_filter, KalmanState};
use surge_core::filter::{surge_filter, FilterConfig, FilterOutput};
use surge_core::guidance::{exact_doob_guidance, likelihood_gradient_guidance, zero_guidance, GuidancePotential};
use surge_core::metrics::MetricReport;
use surge_core::report::{ess_trace_csv, estimates_csv, metrics_csv, scenario_csv, weight_trace_csv};
use surge_core::{make_scenario, LinearGaussianSystem, LorenzSystem, ResamplingConfig, Scenario, StateVector, SystemSpec};

use crate::config::{ExperimentConfig, GuidanceKind, Method, SystemKind};

/// Output directory override, used when no `out_dir` is configured.
pub const OUTPUT_DIR_ENV: &str = "SURGE_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "surge-out";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Filter(#[from] surge_core::SurgeError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// `lorenz_noise` sets the Lorenz-63 process-noise std; `None` keeps the default.
pub fn system_spec(kind: SystemKind, lorenz_noise: Option<f64>) -> SystemSpec {
    match kind {
        SystemKind::LinearGaussian => SystemSpec::LinearGaussian(LinearGaussianSystem::benchmark_1d()),
        SystemKind::Lorenz63 => {
            let mut system = LorenzSystem::default();
            if let Some(std) = lorenz_noise {
                system.params.noise_std = std;
            }
            SystemSpec::Lorenz63(system)
        }
    }
}

/// `flag → env var → default`.
pub fn output_dir(configured: Option<&Path>) -> PathBuf {
    configured
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, RunError> {
    fs::create_dir_all(dir).map_err(|source| RunError::Io { path: dir.to_path_buf(), source })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| RunError::Io { path: path.clone(), source })?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: MetricReport,
    pub files: Vec<PathBuf>,
    pub config_hash: String,
}

impl RunSummary {
    pub fn line(&self) -> String {
        let r = &self.report;
        format!(
            "method={} rmse={:.6} w1={:.6} ess_mean={:.4} ess_min={:.4} config_hash={}",
            r.method, r.rmse, r.w1, r.ess_mean, r.ess_min, self.config_hash
        )
    }
}

fn guidance_for(config: &ExperimentConfig, spec: &SystemSpec) -> Result<Box<dyn GuidancePotential>, RunError> {
    Ok(match (config.guidance, spec) {
        (GuidanceKind::None, _) => Box::new(zero_guidance()),
        (GuidanceKind::Likelihood, _) => Box::new(likelihood_gradient_guidance(
            spec.observation_model()?,
            Arc::new(spec.surrogate()?),
            config.lambda,
        )?),
        (GuidanceKind::Doob, SystemSpec::LinearGaussian(s)) => {
            Box::new(exact_doob_guidance(s.a.clone(), s.q.clone(), s.h.clone(), s.obs_cov())?)
        }
        (GuidanceKind::Doob, _) => {
            return Err(surge_core::SurgeError::InvalidParameter("doob guidance needs a linear-Gaussian system".into()).into())
        }
    })
}

fn filter_config(config: &ExperimentConfig) -> Result<FilterConfig, RunError> {
    let mut fc = FilterConfig::new(config.k, config.seed);
    fc.resampling = ResamplingConfig::new(config.scheme, config.threshold)?;
    fc.mode = config.mode;
    fc.resample_every_k = config.resample_every_k;
    fc.record_weight_trace = config.weight_trace;
    Ok(fc)
}

enum MethodOutput {
    Particles(FilterOutput),
    Exact(Vec<StateVector>),
}

fn run_method(config: &ExperimentConfig, spec: &SystemSpec, scenario: &Scenario) -> Result<MethodOutput, RunError> {
    let surrogate = spec.surrogate()?;
    let model = spec.observation_model()?;
    let ys = &scenario.observations;
    if config.method == Method::Kalman {
        let SystemSpec::LinearGaussian(s) = spec else {
            return Err(surge_core::SurgeError::InvalidParameter("kalman needs a linear-Gaussian system".into()).into());
        };
        let init = KalmanState { mean: s.init_mean.clone(), cov: s.init_cov.clone() };
        let states = kalman_filter(&s.a, &s.q, &s.h, &s.obs_cov(), ys, &init)?;
        return Ok(MethodOutput::Exact(states.into_iter().map(|k| k.mean).collect()));
    }
    let init = scenario.initial_ensemble(config.n, config.seed)?;
    let fc = filter_config(config)?;
    let out = match config.method {
        Method::Surge => surge_filter(&surrogate, guidance_for(config, spec)?.as_ref(), &model, ys, &init, &fc)?,
        Method::Bpf => bootstrap_pf(&surrogate, &model, ys, &init, &fc)?,
        Method::Enkf => enkf(&surrogate, &model, ys, &init, config.k, config.seed)?,
        Method::GuidedUnweighted => guided_ensemble(&surrogate, guidance_for(config, spec)?.as_ref(), &model, ys, &init, config.k, config.seed)?,
        Method::Kalman => unreachable!("handled above"),
    };
    Ok(MethodOutput::Particles(out))
}

/// Runs one experiment and writes `<stem>_metrics.csv`,
/// `<stem>_estimates.csv`, `<stem>_ess.csv` (weighted methods) and
/// `<stem>_weights.csv` (when the weight trace is enabled).
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary, RunError> {
    let spec = system_spec(config.system, Some(config.lorenz_noise));
    let scenario = make_scenario(&spec, config.t, config.scenario_seed)?;
    let hash = config.hash();
    let dir = output_dir(config.out_dir.as_deref());
    let stem = format!("{}_{}_seed{}", config.system, config.method, config.seed);
    let truth = &scenario.truth[1..];

    let (means, ess, weight_trace) = match run_method(config, &spec, &scenario)? {
        MethodOutput::Exact(means) => (means, None, None),
        MethodOutput::Particles(out) => {
            let weighted = matches!(config.method, Method::Surge | Method::Bpf);
            let means = out.means();
            let trace = (config.weight_trace && config.method == Method::Surge).then(|| out.weight_trace.clone());
            (means, weighted.then_some(out.ess_trace), trace)
        }
    };
    let report = MetricReport::new(
        &config.method.to_string(),
        config.scenario_seed,
        config.seed,
        &means,
        truth,
        ess.as_deref().map(|e| (e, config.n)),
    )?;

    let mut files = vec![
        write(&dir, &format!("{stem}_metrics.csv"), &metrics_csv(std::slice::from_ref(&report), &hash))?,
        write(&dir, &format!("{stem}_estimates.csv"), &estimates_csv(&means, &hash))?,
    ];
    if let Some(ess) = &ess {
        files.push(write(&dir, &format!("{stem}_ess.csv"), &ess_trace_csv(ess, &hash))?);
    }
    if let Some(trace) = &weight_trace {
        files.push(write(&dir, &format!("{stem}_weights.csv"), &weight_trace_csv(trace, &hash))?);
    }
    Ok(RunSummary { report, files, config_hash: hash })
}

/// Writes `scenario_<system>_seed<seed>.csv` and returns its path.
pub fn generate_scenario(
    system: SystemKind,
    steps: usize,
    seed: u64,
    lorenz_noise: Option<f64>,
    out_dir: Option<&Path>,
) -> Result<PathBuf, RunError> {
    let spec = system_spec(system, lorenz_noise);
    let scenario = make_scenario(&spec, steps, seed)?;
    let mut canonical = format!("scenario\nsystem={system}\nt={steps}\nseed={seed}\n");
    if let SystemSpec::Lorenz63(s) = &spec {
        canonical.push_str(&format!("lorenz_noise={}\n", s.params.noise_std));
    }
    let hash = hex::encode(<sha2::Sha256 as sha2::Digest>::digest(canonical.as_bytes()))[..16].to_string();
    write(&output_dir(out_dir), &format!("scenario_{system}_seed{seed}.csv"), &scenario_csv(&scenario, &hash))
}
