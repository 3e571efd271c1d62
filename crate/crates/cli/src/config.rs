//! Flat `key = value` experiment configuration.
//!
//! A config file holds one `key = value` pair per line; `#` starts a
//! comment. Command-line flags are merged on top (flags win) and the result
//! is validated in one pass, so every problem is reported at once.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use surge_core::{LorenzParams, ResamplingScheme, WeightMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    LinearGaussian,
    Lorenz63,
}

impl FromStr for SystemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear_gaussian" => Ok(Self::LinearGaussian),
            "lorenz63" => Ok(Self::Lorenz63),
            other => Err(format!("unknown system '{other}' (expected linear_gaussian or lorenz63)")),
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LinearGaussian => "linear_gaussian",
            Self::Lorenz63 => "lorenz63",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Surge,
    Bpf,
    Enkf,
    Kalman,
    GuidedUnweighted,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "surge" => Ok(Self::Surge),
            "bpf" => Ok(Self::Bpf),
            "enkf" => Ok(Self::Enkf),
            "kalman" => Ok(Self::Kalman),
            "guided_unweighted" => Ok(Self::GuidedUnweighted),
            other => Err(format!(
                "unknown method '{other}' (expected surge, bpf, enkf, kalman or guided_unweighted)"
            )),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Surge => "surge",
            Self::Bpf => "bpf",
            Self::Enkf => "enkf",
            Self::Kalman => "kalman",
            Self::GuidedUnweighted => "guided_unweighted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceKind {
    Likelihood,
    Doob,
    None,
}

impl FromStr for GuidanceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "likelihood" => Ok(Self::Likelihood),
            "doob" => Ok(Self::Doob),
            "none" => Ok(Self::None),
            other => Err(format!("unknown guidance '{other}' (expected likelihood, doob or none)")),
        }
    }
}

impl fmt::Display for GuidanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Likelihood => "likelihood",
            Self::Doob => "doob",
            Self::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    pub method: Method,
    pub n: usize,
    pub k: usize,
    pub t: usize,
    pub seed: u64,
    /// Seed of the simulated scenario; defaults to `seed`.
    pub scenario_seed: u64,
    pub guidance: GuidanceKind,
    pub lambda: f64,
    pub scheme: ResamplingScheme,
    pub threshold: f64,
    pub mode: WeightMode,
    pub resample_every_k: bool,
    pub weight_trace: bool,
    /// Process-noise std of the Lorenz-63 system; ignored for linear-Gaussian.
    pub lorenz_noise: f64,
    pub out_dir: Option<PathBuf>,
}

pub const KEYS: [&str; 16] = [
    "system",
    "method",
    "n",
    "k",
    "t",
    "seed",
    "scenario_seed",
    "guidance",
    "lambda",
    "scheme",
    "threshold",
    "mode",
    "resample_every_k",
    "weight_trace",
    "lorenz_noise",
    "out_dir",
];

/// Every problem found in a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem(s)):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Parsed but unvalidated `key → value` pairs.
pub type RawConfig = BTreeMap<String, String>;

pub fn parse_raw(text: &str) -> Result<RawConfig, ConfigErrors> {
    let mut map = RawConfig::new();
    let mut errors = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((key, value)) => {
                let key = key.trim().to_string();
                if map.insert(key.clone(), value.trim().to_string()).is_some() {
                    errors.push(format!("line {}: duplicate key '{key}'", lineno + 1));
                }
            }
            None => errors.push(format!("line {}: expected 'key = value', got '{line}'", lineno + 1)),
        }
    }
    if errors.is_empty() {
        Ok(map)
    } else {
        Err(ConfigErrors(errors))
    }
}

/// Strict parse of a config file's text.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig, ConfigErrors> {
    resolve(&parse_raw(raw)?)
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("expected a boolean, got '{other}'")),
    }
}

/// Validates merged key/value pairs and fills in defaults.
pub fn resolve(raw: &RawConfig) -> Result<ExperimentConfig, ConfigErrors> {
    let mut errors = Vec::new();
    for key in raw.keys() {
        if !KEYS.contains(&key.as_str()) {
            errors.push(format!("unknown key '{key}'"));
        }
    }

    fn field<T>(raw: &RawConfig, errors: &mut Vec<String>, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Option<T> {
        let value = raw.get(key)?;
        match parse(value) {
            Ok(v) => Some(v),
            Err(e) => {
                errors.push(format!("{key}: {e}"));
                None
            }
        }
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| format!("'{s}' is not a non-negative integer ({e})"));
    let seed_of = |s: &str| s.parse::<u64>().map_err(|e| format!("'{s}' is not a valid seed ({e})"));
    let real = |s: &str| s.parse::<f64>().map_err(|e| format!("'{s}' is not a number ({e})"));

    let system = field(raw, &mut errors, "system", SystemKind::from_str).unwrap_or(SystemKind::LinearGaussian);
    let method = field(raw, &mut errors, "method", Method::from_str).unwrap_or(Method::Surge);
    let lorenz = system == SystemKind::Lorenz63;

    let n = field(raw, &mut errors, "n", num).unwrap_or(match (system, method) {
        (SystemKind::Lorenz63, Method::Surge) => 3,
        (SystemKind::Lorenz63, _) => 20,
        (SystemKind::LinearGaussian, _) => 512,
    });
    let k = field(raw, &mut errors, "k", num).unwrap_or(if lorenz { 600 } else { 32 });
    let t = field(raw, &mut errors, "t", num).unwrap_or(if lorenz { 15 } else { 20 });
    let seed = field(raw, &mut errors, "seed", seed_of);
    if !raw.contains_key("seed") {
        errors.push("seed: missing (seeds are mandatory for reproducibility)".into());
    }
    let scenario_seed = field(raw, &mut errors, "scenario_seed", seed_of);
    let guidance = field(raw, &mut errors, "guidance", GuidanceKind::from_str).unwrap_or(GuidanceKind::Likelihood);
    let lambda = field(raw, &mut errors, "lambda", real).unwrap_or(1.0);
    let scheme = field(raw, &mut errors, "scheme", |s| ResamplingScheme::from_str(s).map_err(|e| e.to_string()))
        .unwrap_or(ResamplingScheme::Systematic);
    let threshold = field(raw, &mut errors, "threshold", real).unwrap_or(0.75);
    let mode = field(raw, &mut errors, "mode", |s| WeightMode::from_str(s).map_err(|e| e.to_string()))
        .unwrap_or(WeightMode::Incremental);
    let resample_every_k = field(raw, &mut errors, "resample_every_k", parse_bool).unwrap_or(true);
    let weight_trace = field(raw, &mut errors, "weight_trace", parse_bool).unwrap_or(false);
    let lorenz_noise = field(raw, &mut errors, "lorenz_noise", real).unwrap_or(LorenzParams::default().noise_std);
    let out_dir = raw.get("out_dir").map(PathBuf::from);

    if n == 0 {
        errors.push("n: must be >= 1".into());
    }
    if method == Method::Enkf && n == 1 {
        errors.push("n: EnKF needs at least 2 members".into());
    }
    if k == 0 {
        errors.push("k: must be >= 1".into());
    }
    if t == 0 {
        errors.push("t: must be >= 1".into());
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        errors.push(format!("lambda: must be finite and >= 0, got {lambda}"));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        errors.push(format!("threshold: must be in (0, 1], got {threshold}"));
    }
    if !(lorenz_noise >= 0.0 && lorenz_noise.is_finite()) {
        errors.push(format!("lorenz_noise: must be finite and >= 0, got {lorenz_noise}"));
    }
    if raw.contains_key("lorenz_noise") && !lorenz {
        errors.push("lorenz_noise: only applies to system = lorenz63".into());
    }
    if method == Method::Kalman && lorenz {
        errors.push("method: kalman requires system = linear_gaussian".into());
    }
    if guidance == GuidanceKind::Doob && lorenz {
        errors.push("guidance: doob requires system = linear_gaussian".into());
    }

    match (errors.is_empty(), seed) {
        (true, Some(seed)) => Ok(ExperimentConfig {
            system,
            method,
            n,
            k,
            t,
            seed,
            scenario_seed: scenario_seed.unwrap_or(seed),
            guidance,
            lambda,
            scheme,
            threshold,
            mode,
            resample_every_k,
            weight_trace,
            lorenz_noise,
            out_dir,
        }),
        _ => Err(ConfigErrors(errors)),
    }
}

impl ExperimentConfig {
    /// Canonical `key=value` lines of everything that affects the results.
    /// The output directory is excluded so relocating output keeps the hash.
    pub fn canonical(&self) -> String {
        let mut text = format!(
            "system={}\nmethod={}\nn={}\nk={}\nt={}\nseed={}\nscenario_seed={}\nguidance={}\nlambda={}\nscheme={}\nthreshold={}\nmode={}\nresample_every_k={}\nweight_trace={}\n",
            self.system,
            self.method,
            self.n,
            self.k,
            self.t,
            self.seed,
            self.scenario_seed,
            self.guidance,
            self.lambda,
            self.scheme,
            self.threshold,
            self.mode,
            self.resample_every_k,
            self.weight_trace,
        );
        if self.system == SystemKind::Lorenz63 {
            text.push_str(&format!("lorenz_noise={}\n", self.lorenz_noise));
        }
        text
    }

    /// First 16 hex digits of the SHA-256 of [`canonical`](Self::canonical).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}
