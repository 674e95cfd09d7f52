use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SOLVE: &str = r#"
command = "solve"
seed = 3

[population]
kind = "logistic"
d = 3
contexts = 8
theta_norm = 1.0
seed = 2

[solve]
lambdas = [0.1, 0.01]
n = 400
"#;

const VERIFY_SMALL: &str = r#"
command = "verify"
seed = 8

[verify]
losses = ["square", "logistic"]
trials = 200
zero_lambda_trials = 20
max_dim = 4
theta_radius = 1.0
localization_populations = 4
"#;

fn screg(dir: &Path, config: &str, extra: &[&str], jobs_env: Option<&str>) -> Output {
    let path = dir.join("run.toml");
    fs::write(&path, config).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_screg"));
    cmd.arg("--config").arg(&path).arg("--out").arg(dir.join("out"));
    cmd.args(extra).env_remove("SCREG_JOBS");
    if let Some(v) = jobs_env {
        cmd.env("SCREG_JOBS", v);
    }
    cmd.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_writes_stamped_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = screg(dir.path(), SOLVE, &["--seed", "41"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    for name in ["solve.csv", "solve_theta.csv"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("# screg solve config_sha256="), "{header}");
        assert!(header.ends_with(" seed=41"), "{header}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["command"], "solve");
    assert_eq!(summary["seed"], 41);
    assert!(!out.join(".solve.csv.tmp").exists());
}

#[test]
fn small_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = screg(dir.path(), VERIFY_SMALL, &["--quiet"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    assert!(dir.path().join("out/verify.csv").exists());
    assert!(dir.path().join("out/localization.csv").exists());
}

#[test]
fn unknown_key_is_a_config_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let config = SOLVE.replace("n = 400", "n = 400\nsamples = 3");
    let o = screg(dir.path(), &config, &[], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("samples"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn out_of_range_delta_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"
command = "rates"
seed = 1

[population]
kind = "source"
d = 8
r = 0.5
alpha = 2.0
seed = 1

[rates]
regime = "source"
n_grid = [128, 256]
replicates = 4
delta = 0.7
"#;
    let o = screg(dir.path(), config, &[], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("delta must lie in (0, 0.5]"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bad_jobs_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = screg(dir.path(), SOLVE, &[], Some("many"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("SCREG_JOBS"));
    let o = screg(dir.path(), SOLVE, &["--jobs", "0"], None);
    assert_eq!(o.status.code(), Some(2));
    let o = screg(dir.path(), SOLVE, &["--jobs", "2"], Some("many"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn missing_config_and_bad_flags_exit_two() {
    let o = Command::new(env!("CARGO_BIN_EXE_screg"))
        .args(["--config", "/nonexistent/screg.toml"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_screg"))
        .arg("--bogus")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_is_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let read = |dir: &Path| fs::read(dir.join("out/solve.csv")).unwrap();
    assert_eq!(screg(dir.path(), SOLVE, &["--jobs", "1"], None).status.code(), Some(0));
    let single = read(dir.path());
    assert_eq!(screg(dir.path(), SOLVE, &["--jobs", "3"], None).status.code(), Some(0));
    assert_eq!(single, read(dir.path()));
}
