use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use surge_cli::config::{self, RawConfig, SystemKind};
use surge_cli::run::{generate_scenario, run_experiment};
use surge_core::acceptance::{run_criteria, CRITERIA};

#[derive(Parser)]
#[command(name = "surge", version, about = "Girsanov-weighted particle filtering with diffusion-surrogate transitions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one filter on a simulated scenario and write CSV reports.
    Run(Box<RunArgs>),
    /// Run a predefined suite of experiments.
    Compare(CompareArgs),
    /// Simulate a scenario and write it as CSV.
    GenerateScenario(ScenarioArgs),
}

/// Every flag overrides the matching key of `--config`.
#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// linear_gaussian | lorenz63
    #[arg(long)]
    system: Option<String>,
    /// surge | bpf | enkf | kalman | guided_unweighted
    #[arg(long)]
    method: Option<String>,
    /// Number of particles.
    #[arg(long, allow_hyphen_values = true)]
    n: Option<String>,
    /// Internal Euler–Maruyama steps per window.
    #[arg(long, allow_hyphen_values = true)]
    k: Option<String>,
    /// Number of observation times.
    #[arg(long, allow_hyphen_values = true)]
    t: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    scenario_seed: Option<String>,
    /// likelihood | doob | none
    #[arg(long)]
    guidance: Option<String>,
    /// Guidance strength.
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<String>,
    /// systematic | multinomial
    #[arg(long)]
    scheme: Option<String>,
    /// Resample when ESS < threshold · N.
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<String>,
    /// incremental | whole_step
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    resample_every_k: Option<String>,
    /// Process-noise std of the Lorenz-63 system (default 0.05).
    #[arg(long, allow_hyphen_values = true)]
    lorenz_noise: Option<String>,
    /// Also write the per-step weight trace (SURGE only).
    #[arg(long)]
    weight_trace: bool,
    /// Output directory; defaults to $SURGE_OUTPUT_DIR, then ./surge-out.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Acceptance,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    /// Comma-separated subset of criteria, e.g. `1,2,7`.
    #[arg(long, value_delimiter = ',')]
    criteria: Option<Vec<u8>>,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, default_value = "linear_gaussian")]
    system: String,
    #[arg(long, default_value_t = 20)]
    t: usize,
    #[arg(long)]
    seed: u64,
    /// Process-noise std of the Lorenz-63 system (default 0.05).
    #[arg(long)]
    lorenz_noise: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn merged_config(args: RunArgs) -> Result<config::ExperimentConfig, String> {
    let mut raw: RawConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            config::parse_raw(&text).map_err(|e| e.to_string())?
        }
        None => RawConfig::new(),
    };
    let flags = [
        ("system", args.system),
        ("method", args.method),
        ("n", args.n),
        ("k", args.k),
        ("t", args.t),
        ("seed", args.seed),
        ("scenario_seed", args.scenario_seed),
        ("guidance", args.guidance),
        ("lambda", args.lambda),
        ("scheme", args.scheme),
        ("threshold", args.threshold),
        ("mode", args.mode),
        ("resample_every_k", args.resample_every_k),
        ("lorenz_noise", args.lorenz_noise),
        ("out_dir", args.out.map(|p| p.display().to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            raw.insert(key.to_string(), v);
        }
    }
    if args.weight_trace {
        raw.insert("weight_trace".into(), "true".into());
    }
    config::resolve(&raw).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => {
            let config = match merged_config(*args) {
                Ok(c) => c,
                Err(e) => {
                    eprint!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match run_experiment(&config) {
                Ok(summary) => {
                    println!("{}", summary.line());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Compare(args) => {
            let Suite::Acceptance = args.suite;
            let ids = args.criteria.unwrap_or_else(|| CRITERIA.to_vec());
            if let Some(bad) = ids.iter().find(|id| !CRITERIA.contains(id)) {
                eprintln!("error: no criterion {bad} (expected 1..=11)");
                return ExitCode::from(2);
            }
            let outcomes = run_criteria(&ids, |o| println!("{}", o.line()));
            let passed = outcomes.iter().filter(|o| o.passed).count();
            println!("{passed} of {} criteria passed", outcomes.len());
            if passed == outcomes.len() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::GenerateScenario(args) => {
            let system = match args.system.parse::<SystemKind>() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match generate_scenario(system, args.t, args.seed, args.lorenz_noise, args.out.as_deref()) {
                Ok(path) => {
                    println!("{}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
