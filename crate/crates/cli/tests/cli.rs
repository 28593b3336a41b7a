use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const QUAD: &str = r#"
seed = 2
runs = 2
algorithm = "fedast_static"

[population]
clients = 50
availability = 0.5

[run]
max_sim_time = 200.0

[[tasks]]
id = 0
objective = { kind = "quadratic", dim = 2 }
data = { source = "quadratic_clients", sigma_g = 0.3 }
tau = 2
eta_c = 0.05
eta_s = 1.0
batch_size = 1
r0 = 8
b0 = 2
target = { kind = "loss", value = 0.2 }
"#;

fn fedast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedast")).args(args).env_remove("RUST_LOG").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "q.toml", QUAD);
    let out = dir.path().join("out");
    let o = fedast(&["run", "--config", s(&cfg), "--out", s(&out), "--runs", "3", "--seed", "11"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for r in 0..3 {
        assert!(out.join(format!("metrics_run{r}.csv")).exists());
        assert!(out.join(format!("metrics_run{r}.jsonl")).exists());
    }
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"base_seed\": 11"));
    assert!(summary.contains("\"runs\": 3"));
}

#[test]
fn strict_target_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "q.toml", &QUAD.replace("value = 0.2", "value = 1e-9").replace("200.0", "20.0"));
    let out = dir.path().join("out");
    assert_eq!(fedast(&["run", "--config", s(&cfg), "--out", s(&out)]).status.code(), Some(0));
    assert_eq!(fedast(&["run", "--config", s(&cfg), "--out", s(&out), "--strict-target"]).status.code(), Some(3));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", &QUAD.replace("r0 = 8", "r0 = 0"));
    let o = fedast(&["validate", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("r0"));
    let missing = dir.path().join("nope.toml");
    assert_eq!(fedast(&["run", "--config", s(&missing), "--out", s(dir.path())]).status.code(), Some(1));
}

#[test]
fn divergence_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "q.toml", &QUAD.replace("eta_c = 0.05", "eta_c = 40.0").replace("tau = 2", "tau = 6"));
    let o = fedast(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn validate_reports_the_binding_term() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "q.toml", QUAD);
    let o = fedast(&["validate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("eta_c = 0.05 exceeds"), "{text}");
    assert!(text.contains("binding: staleness"), "{text}");

    let ok = write(dir.path(), "ok.toml", &QUAD.replace("eta_c = 0.05", "eta_c = 0.01"));
    let text = String::from_utf8_lossy(&fedast(&["validate", "--config", s(&ok)]).stdout).into_owned();
    assert!(text.contains("0 warning(s)"), "{text}");
}

#[test]
fn compare_prints_gains() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.toml", QUAD);
    let b = write(dir.path(), "b.toml", &QUAD.replace("fedast_static", "no_buffer"));
    let out = dir.path().join("cmp");
    let o = fedast(&["compare", "--a", s(&a), "--b", s(&b), "--paired", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("gain_%"));
    assert!(out.join("comparison.json").exists());
    assert!(out.join("curves_a.csv").exists() && out.join("curves_b.csv").exists());
}
