use std::path::Path;
use std::process::{Command, Output};

fn affrec(args: &[&str], out_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_affrec"));
    cmd.args(args);
    match out_dir {
        Some(d) => cmd.env("AFFREC_OUTPUT_DIR", d),
        None => cmd.env_remove("AFFREC_OUTPUT_DIR"),
    };
    cmd.output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SIMILARITY: &str = r#"{"family": {"type": "similarity", "mean_log_a": 0.0, "sigma_log_a": 1.0}, "dim": 2}"#;

#[test]
fn list_and_schema_succeed() {
    let out = affrec(&["list-experiments"], None);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 9);
    assert!(text.contains("rk1_suite"));

    let out = affrec(&["print-schema"], None);
    assert_eq!(out.status.code(), Some(0));
    let schema: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(schema["schema_version"], 1);
}

#[test]
fn run_writes_report_into_the_env_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"schema_version": 1, "experiment": "sigma2", "seed": 4, "horizon": 300, "replicas": 20,
                "output_dir": "/nonexistent/should/not/be/used", "model": {SIMILARITY}}}"#
        ),
    );
    let out_dir = dir.path().join("out");
    let out = affrec(&["--workers", "2", "run", &cfg], Some(&out_dir));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["workers"], 2);
    assert_eq!(report["estimates"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_configs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"schema_version": 1, "experiment": "lyapunov", "seed": 1, "typo": 0}"#);
    assert_eq!(affrec(&["run", &cfg], Some(dir.path())).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(affrec(&["run", missing.to_str().unwrap()], Some(dir.path())).status.code(), Some(2));
    let cfg = write_config(
        dir.path(),
        &format!(r#"{{"schema_version": 1, "experiment": "rk1_suite", "seed": 1, "model": {SIMILARITY}}}"#),
    );
    assert_eq!(affrec(&["run", &cfg], Some(dir.path())).status.code(), Some(2));
    assert_eq!(affrec(&["acceptance", "--only", "12"], None).status.code(), Some(2));
}

#[test]
fn insufficient_data_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"schema_version": 1, "experiment": "recurrence", "seed": 1, "horizon": 100, "replicas": 2,
                "model": {SIMILARITY}}}"#
        ),
    );
    assert_eq!(affrec(&["run", &cfg], Some(dir.path())).status.code(), Some(3));
}

#[test]
fn acceptance_subset_prints_one_line_per_criterion() {
    let out = affrec(&["acceptance", "--quick", "--only", "1,3"], None);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| l.starts_with("criterion")).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|l| l.contains("PASS")));
}
