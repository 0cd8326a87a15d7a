use std::path::PathBuf;

use critical_affine::error::Error;
use critical_affine::experiment::{
    exit_code, read_csv, run, write_csv, ExperimentConfig, ExperimentKind, LadderRow, RncRow, RunReport,
    TrajectoryRow, EXIT_CONFIG, EXIT_NUMERICAL, LADDER_CSV, RNC_CSV, TRAJECTORY_CSV,
};
use critical_affine::models::{reference, Family, ModelSpec};
use proptest::prelude::*;

fn small(kind: ExperimentKind, dir: PathBuf) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(kind, Some(reference::similarity(2, 1.0)), 11);
    cfg.horizon = 500;
    cfg.replicas = 40;
    cfg.output_dir = dir;
    cfg
}

/// The report with the fields that legitimately differ between runs blanked.
fn normalized(mut r: RunReport) -> String {
    r.wall_time_seconds = 0.0;
    r.config.output_dir = PathBuf::new();
    r.config.workers = 1;
    serde_json::to_string(&r).unwrap()
}

#[test]
fn config_json_round_trips_with_defaults() {
    let text = r#"{
        "schema_version": 1,
        "experiment": "ladder_tail",
        "seed": 7,
        "model": {"family": {"type": "rank_one", "mean_log_a": 0.0, "sigma_log_a": 1.0,
                             "directions": {"type": "uniform"}}, "dim": 3}
    }"#;
    let cfg = ExperimentConfig::from_json(text).unwrap();
    assert_eq!(cfg.experiment, ExperimentKind::LadderTail);
    assert_eq!(cfg.horizon, 10_000);
    assert_eq!(cfg.workers, 1);
    assert!((cfg.rho - (-1.0f64).exp()).abs() < 1e-15);
    let again = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn unknown_and_malformed_configs_are_config_errors() {
    for text in [
        r#"{"schema_version": 1, "experiment": "acceptance_all", "seed": 1, "extra": true}"#,
        r#"{"schema_version": 1, "experiment": "no_such_thing", "seed": 1}"#,
        r#"{"schema_version": 1, "experiment": "lyapunov", "seed": 1}"#,
        r#"{"schema_version": 1, "experiment": "acceptance_all", "seed": 1, "rho": 2.0}"#,
        r#"{"schema_version": 1, "experiment": "lyapunov", "seed": 1,
            "model": {"family": {"type": "similarity", "mean_log_a": 0.0, "sigma_log_a": 1.0}, "dim": 0}}"#,
        "not json",
    ] {
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        assert_eq!(exit_code(&err), EXIT_CONFIG);
    }
}

#[test]
fn numerical_errors_map_to_their_own_exit_code() {
    assert_eq!(exit_code(&Error::InsufficientData("x".into())), EXIT_NUMERICAL);
    assert_eq!(
        exit_code(&Error::CalibrationFailed {
            rounds: 3,
            last_estimate: 0.1
        }),
        EXIT_NUMERICAL
    );
}

#[test]
fn rank_one_suite_rejects_other_families() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(ExperimentKind::Rk1Suite, dir.path().into());
    assert!(matches!(run(&cfg), Err(Error::Config(_))));
}

#[test]
fn reports_do_not_depend_on_workers_or_repetition() {
    let (d1, d2, d3) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = run(&small(ExperimentKind::Lyapunov, d1.path().into())).unwrap();
    let b = run(&small(ExperimentKind::Lyapunov, d2.path().into())).unwrap();
    let mut cfg = small(ExperimentKind::Lyapunov, d3.path().into());
    cfg.workers = 3;
    let c = run(&cfg).unwrap();
    assert_eq!(normalized(a.report.clone()), normalized(b.report));
    assert_eq!(normalized(a.report.clone()), normalized(c.report));
    let on_disk: RunReport = serde_json::from_str(&std::fs::read_to_string(&a.report_path).unwrap()).unwrap();
    assert_eq!(normalized(on_disk), normalized(a.report));
}

#[test]
fn uncentred_similarity_reports_its_drift() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(ExperimentKind::Lyapunov, dir.path().into());
    cfg.model = Some(ModelSpec::new(
        Family::Similarity {
            mean_log_a: 0.3,
            sigma_log_a: 1.0,
        },
        2,
    ));
    cfg.horizon = 10_000;
    cfg.replicas = 100;
    let out = run(&cfg).unwrap();
    for e in &out.report.estimates {
        assert!((e.estimate.point - 0.3).abs() < 4.0 * e.estimate.stderr, "{}: {:?}", e.name, e.estimate);
    }
}

#[test]
fn diagonal_counterexample_is_transient() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(ExperimentKind::Recurrence, dir.path().into());
    cfg.model = Some(reference::diagonal_counterexample(0.3).with_b_law(reference::gaussian_b(1e-4)));
    cfg.horizon = 100_000;
    cfg.replicas = 100;
    let out = run(&cfg).unwrap();
    assert_eq!(out.report.exit_code(), 0);
    let v = out.report.verdicts.iter().find(|v| v.name == "recurrence").unwrap();
    assert_eq!(v.outcome, "transient_like");
    let rows: Vec<TrajectoryRow> = read_csv(&dir.path().join(TRAJECTORY_CSV)).unwrap();
    assert_eq!(rows.len(), 100);
}

#[test]
fn ladder_run_writes_readable_samples() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(ExperimentKind::LadderTail, dir.path().into());
    cfg.replicas = 3000;
    cfg.cap = 20_000;
    let out = run(&cfg).unwrap();
    let rows: Vec<LadderRow> = read_csv(&dir.path().join(LADDER_CSV)).unwrap();
    assert_eq!(rows.len(), 3000);
    assert!(rows.iter().all(|r| r.value >= 1 && r.value <= r.cap && r.cap == 20_000));
    assert!(rows.iter().all(|r| !r.censored || r.value == r.cap));
    let slope = out.report.estimates.iter().find(|e| e.name == "survival_slope").unwrap();
    assert!((slope.estimate.point + 0.5).abs() < 0.15, "{}", slope.estimate.point);
}

#[test]
fn rnc_run_writes_one_row_per_replica_and_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(ExperimentKind::RncMoments, dir.path().into());
    cfg.model = Some(reference::invertible_proximal(0.55, 1.0, 0.1));
    cfg.horizon = 1000;
    cfg.replicas = 30;
    run(&cfg).unwrap();
    let rows: Vec<RncRow> = read_csv(&dir.path().join(RNC_CSV)).unwrap();
    assert_eq!(rows.len(), 30 * 3);
    assert_eq!(rows[0].horizon, 10);
    assert_eq!(rows[2].horizon, 1000);
}

#[test]
fn csv_lines_end_with_bare_newlines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let rows = vec![TrajectoryRow {
        replica_id: 0,
        return_count: 3,
        last_window_min: 1.5,
        median_lognorm_slope: -0.25,
    }];
    write_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, "replica_id,return_count,last_window_min,median_lognorm_slope\n0,3,1.5,-0.25\n");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ladder_rows_round_trip(rows in prop::collection::vec(
        (any::<u32>(), 1u64..1_000_000, any::<bool>(), 0.01f64..0.99),
        0..40,
    )) {
        let rows: Vec<LadderRow> = rows
            .into_iter()
            .map(|(id, value, censored, rho)| LadderRow { replica_id: id as u64, value, censored, rho, cap: 1_000_000 })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ladder.csv");
        write_csv(&path, &rows).unwrap();
        let back: Vec<LadderRow> = read_csv(&path).unwrap();
        prop_assert_eq!(back, rows);
    }

    #[test]
    fn rnc_rows_round_trip(rows in prop::collection::vec(
        (0u64..1000, 1u64..100_000, -700.0f64..10.0, any::<bool>()),
        0..40,
    )) {
        let rows: Vec<RncRow> = rows
            .into_iter()
            .map(|(replica_id, horizon, log_value, stabilized)| RncRow { replica_id, horizon, log_value, stabilized })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rnc.csv");
        write_csv(&path, &rows).unwrap();
        let back: Vec<RncRow> = read_csv(&path).unwrap();
        prop_assert_eq!(back, rows);
    }
}
