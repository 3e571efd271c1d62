use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn surge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surge"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SURGE_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn kalman_run_writes_reports_with_hash_footer() {
    let dir = tempfile::tempdir().unwrap();
    let out = surge(&["run", "--method", "kalman", "--seed", "1", "--t", "10", "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let line = stdout(&out);
    assert!(line.starts_with("method=kalman rmse="), "{line}");
    let hash = line.trim().rsplit("config_hash=").next().unwrap().to_string();
    assert_eq!(hash.len(), 16);

    let metrics = fs::read_to_string(dir.path().join("o/linear_gaussian_kalman_seed1_metrics.csv")).unwrap();
    assert!(metrics.trim_end().ends_with(&format!("# config_hash={hash}")), "{metrics}");
    let estimates = fs::read_to_string(dir.path().join("o/linear_gaussian_kalman_seed1_estimates.csv")).unwrap();
    // header + 10 rows + footer
    assert_eq!(estimates.lines().count(), 12);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |o: &'static str| vec!["run", "--method", "surge", "--n", "32", "--k", "8", "--t", "5", "--seed", "7", "--weight-trace", "--out", o];
    let a = surge(&args("a"), dir.path());
    let b = surge(&args("b"), dir.path());
    assert!(a.status.success() && b.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    for suffix in ["metrics", "estimates", "ess", "weights"] {
        let name = format!("linear_gaussian_surge_seed7_{suffix}.csv");
        let fa = fs::read(dir.path().join("a").join(&name)).unwrap();
        let fb = fs::read(dir.path().join("b").join(&name)).unwrap();
        assert_eq!(fa, fb, "{name} differs");
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("exp.cfg"),
        "# small run\nmethod = bpf\nn = 16\nk = 4\nt = 3\nseed = 5\n",
    )
    .unwrap();
    let out = surge(&["run", "--config", "exp.cfg", "--method", "enkf", "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("method=enkf"));
    assert!(dir.path().join("o/linear_gaussian_enkf_seed5_metrics.csv").exists());
    // EnKF is unweighted, so no ESS report.
    assert!(!dir.path().join("o/linear_gaussian_enkf_seed5_ess.csv").exists());
}

#[test]
fn invalid_configs_exit_with_code_two_and_name_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "n = 0\nlambda = -1\nthreshold = 2\nbogus = 1\n").unwrap();
    let out = surge(&["run", "--config", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    for needle in ["seed", "n:", "lambda", "threshold", "bogus"] {
        assert!(err.contains(needle), "missing {needle:?} in {err}");
    }

    let out = surge(&["run", "--system", "lorenz63", "--method", "kalman", "--seed", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("kalman"));

    let out = surge(&["run", "--config", "missing.cfg", "--seed", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_dir_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_surge"))
        .args(["run", "--method", "kalman", "--seed", "2", "--t", "3"])
        .current_dir(dir.path())
        .env("SURGE_OUTPUT_DIR", dir.path().join("from-env"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("from-env/linear_gaussian_kalman_seed2_metrics.csv").exists());

    let out = surge(&["run", "--method", "kalman", "--seed", "2", "--t", "3"], dir.path());
    assert!(out.status.success());
    assert!(dir.path().join("surge-out/linear_gaussian_kalman_seed2_metrics.csv").exists());
}

#[test]
fn generate_scenario_writes_truth_and_observations() {
    let dir = tempfile::tempdir().unwrap();
    let out = surge(&["generate-scenario", "--system", "lorenz63", "--t", "6", "--seed", "3", "--out", "s"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("s/scenario_lorenz63_seed3.csv")).unwrap();
    assert!(csv.lines().count() >= 7);
    assert!(csv.trim_end().lines().last().unwrap().starts_with("# config_hash="));
}

#[test]
fn compare_runs_a_subset_of_the_acceptance_suite() {
    let dir = tempfile::tempdir().unwrap();
    let out = surge(&["compare", "--suite", "acceptance", "--criteria", "1,2,7"], dir.path());
    let text = stdout(&out);
    assert!(out.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 3, "{text}");
    assert!(text.contains("3 of 3 criteria passed"));

    let out = surge(&["compare", "--suite", "acceptance", "--criteria", "12"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn lorenz_noise_changes_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |noise: &str, out: &str| surge(&["generate-scenario", "--system", "lorenz63", "--t", "4", "--seed", "1", "--lorenz-noise", noise, "--out", out], dir.path());
    assert!(gen("0.05", "a").status.success());
    assert!(gen("0.25", "b").status.success());
    let a = fs::read_to_string(dir.path().join("a/scenario_lorenz63_seed1.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("b/scenario_lorenz63_seed1.csv")).unwrap();
    assert_ne!(a, b);
}
