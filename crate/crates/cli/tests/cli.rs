use std::path::Path;
use std::process::{Command, Output};

use karlin_core::special::ParityPattern;
use karlin_core::theory::m_coeff;

const SMOKE: &str = r#"
experiment = "gaussian_corr"
[model]
preset = "enriquez"
hurst = 0.35
[plan]
n = 500
m_n = 100
reps = 2000
times = [0.5, 1.0]
seed = 7
"#;

fn karlin(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_karlin"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn smoke_run_passes_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("out");
    let o = karlin(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("gaussian_corr.json")).unwrap()).unwrap();
    assert_eq!(json["experiment"], "gaussian_corr");
    let csv = std::fs::read_to_string(out.join("gaussian_corr.csv")).unwrap();
    assert_eq!(csv.lines().count(), json["checks"].as_array().unwrap().len() + 1);
}

#[test]
fn missing_model_field_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "experiment = \"clt\"\n[model]\nalpha_prime = 1.5\nrho = 0.5\n[plan]\nn = 10\nm_n = 5\nreps = 10\ntimes = [1.0]\n",
    );
    let o = karlin(&["run", &cfg, "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.alpha"));
}

#[test]
fn overrides_replace_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("out");
    let o = karlin(&["run", &cfg, "--set", "plan.reps=500", "--set", "plan.seed=3", "--out", out.to_str().unwrap()], &[]);
    assert!(matches!(o.status.code(), Some(0) | Some(4)));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("gaussian_corr.json")).unwrap()).unwrap();
    assert_eq!(json["params"]["plan"]["reps"], 500);
    assert_eq!(json["params"]["plan"]["seed"], 3);
}

#[test]
fn malformed_override_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let o = karlin(&["run", &cfg, "--set", "plan.reps"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exhausted_budget_exits_with_budget_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let o = karlin(&["run", &cfg, "--out", dir.path().to_str().unwrap()], &[("KARLIN_BUDGET", "1000")]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let o = karlin(&["run", "/nonexistent/run.toml"], &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_m_coeff_prints_library_value() {
    let o = karlin(&["eval", "m-coeff", "--alpha", "1.5", "--beta", "0.5", "--times", "0.5,1", "--delta", "1,0"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let printed: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    let pattern = ParityPattern::new(vec![0.5, 1.0], vec![true, false]).unwrap();
    assert_eq!(printed, m_coeff(1.5, 0.5, &pattern).unwrap());
}

#[test]
fn eval_rejects_bad_times() {
    let o = karlin(&["eval", "m-coeff", "--alpha", "1.5", "--beta", "0.5", "--times", "1,0.5", "--delta", "1,0"], &[]);
    assert_eq!(o.status.code(), Some(2));
}
