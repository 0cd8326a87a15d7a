//! JSON-configured experiments, run reports and CSV sample files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::acceptance::{self, AcceptanceSummary, Budget};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_lyapunov, estimate_lyapunov_walk, estimate_sigma2, estimate_sigma2_batch_means, fit_contraction_rate,
    fit_tail_exponent, rnc_moment_curve, EstimateReport, MomentAccumulator, RecurrenceThresholds,
};
use crate::exterior::estimate_proximal_dimension;
use crate::models::{calibrate_centring, CalibrationBudget, Family, ModelSpec};
use crate::rk1::{
    increment_correlation, pn_weight_check, rk1_sigma2_closed_form, two_step_stationarity_check, SignedRay,
    WeightN,
};
use crate::stream::Streams;

pub const SCHEMA_VERSION: u32 = 1;
/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "AFFREC_OUTPUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_ACCEPTANCE: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Lyapunov,
    Sigma2,
    LadderTail,
    Contraction,
    RncMoments,
    Recurrence,
    Rk1Suite,
    ExteriorSuite,
    AcceptanceAll,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::Lyapunov,
        ExperimentKind::Sigma2,
        ExperimentKind::LadderTail,
        ExperimentKind::Contraction,
        ExperimentKind::RncMoments,
        ExperimentKind::Recurrence,
        ExperimentKind::Rk1Suite,
        ExperimentKind::ExteriorSuite,
        ExperimentKind::AcceptanceAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Lyapunov => "lyapunov",
            ExperimentKind::Sigma2 => "sigma2",
            ExperimentKind::LadderTail => "ladder_tail",
            ExperimentKind::Contraction => "contraction",
            ExperimentKind::RncMoments => "rnc_moments",
            ExperimentKind::Recurrence => "recurrence",
            ExperimentKind::Rk1Suite => "rk1_suite",
            ExperimentKind::ExteriorSuite => "exterior_suite",
            ExperimentKind::AcceptanceAll => "acceptance_all",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::Lyapunov => "top Lyapunov exponent from product norms and from the direction walk",
            ExperimentKind::Sigma2 => "asymptotic variance of the walk (replicas and batch means)",
            ExperimentKind::LadderTail => "survival exponent of the first ladder epoch; writes ladder.csv",
            ExperimentKind::Contraction => "decay rate of the mean distance between paired directions",
            ExperimentKind::RncMoments => "moment curves of RNC coefficients at nested horizons; writes rnc.csv",
            ExperimentKind::Recurrence => "recurrence verdict from trajectories at the origin; writes trajectories.csv",
            ExperimentKind::Rk1Suite => "rank-one stationarity, weight bounds, increment independence and variance",
            ExperimentKind::ExteriorSuite => "Lyapunov spectrum, proximal dimension and exterior lift additivity",
            ExperimentKind::AcceptanceAll => "the full acceptance suite",
        }
    }

    fn needs_model(self) -> bool {
        self != ExperimentKind::AcceptanceAll
    }
}

fn default_horizon() -> u64 {
    10_000
}
fn default_replicas() -> u64 {
    100
}
fn default_cap() -> u64 {
    100_000
}
fn default_rho() -> f64 {
    (-1.0f64).exp()
}
fn default_radius() -> f64 {
    20.0
}
fn default_beta_grid() -> Vec<f64> {
    vec![1.0, 2.0, 3.5]
}
fn default_alpha() -> f64 {
    0.4
}
fn default_burn_in() -> usize {
    200
}
fn default_workers() -> usize {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("affrec-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    /// Centre the model to this Lyapunov tolerance before running.
    #[serde(default)]
    pub calibrate: Option<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_replicas")]
    pub replicas: u64,
    /// Censoring cap for ladder epochs.
    #[serde(default = "default_cap")]
    pub cap: u64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Radius `K` of the return ball.
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_beta_grid")]
    pub beta_grid: Vec<f64>,
    /// Order of the ladder-epoch moment reported by `ladder_tail`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub thresholds: RecurrenceThresholds,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Quick budgets for `acceptance_all`.
    #[serde(default)]
    pub quick: bool,
}

impl ExperimentConfig {
    /// Minimal config with defaults for everything optional.
    pub fn new(experiment: ExperimentKind, model: Option<ModelSpec>, seed: u64) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment,
            model,
            calibrate: None,
            horizon: default_horizon(),
            replicas: default_replicas(),
            cap: default_cap(),
            rho: default_rho(),
            radius: default_radius(),
            beta_grid: default_beta_grid(),
            alpha: default_alpha(),
            thresholds: RecurrenceThresholds::default(),
            burn_in: default_burn_in(),
            seed,
            workers: default_workers(),
            output_dir: default_output_dir(),
            quick: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.horizon == 0 || self.replicas == 0 || self.cap == 0 || self.workers == 0 {
            return bad("horizon, replicas, cap and workers must be positive".into());
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad("radius must be positive".into());
        }
        if self.beta_grid.is_empty() || self.beta_grid.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return bad("beta_grid must be a nonempty list of positive numbers".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive".into());
        }
        if let Some(tol) = self.calibrate {
            if !(tol > 0.0) {
                return bad("calibrate must be a positive tolerance".into());
            }
        }
        match (&self.model, self.experiment.needs_model()) {
            (None, true) => bad(format!("experiment {} needs a model", self.experiment.name())),
            (Some(m), _) => m.validate().map_err(|e| Error::Config(e.to_string())),
            (None, false) => Ok(()),
        }
    }

    /// Output directory after the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedEstimate {
    pub name: String,
    pub estimate: EstimateReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub outcome: String,
    #[serde(default)]
    pub details: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub artifact: String,
    pub artifact_version: String,
    pub schema_version: u32,
    pub config: ExperimentConfig,
    /// Model actually simulated (after centring, when requested).
    pub model: Option<ModelSpec>,
    pub estimates: Vec<NamedEstimate>,
    pub verdicts: Vec<Verdict>,
    pub acceptance: Option<AcceptanceSummary>,
    pub wall_time_seconds: f64,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        match &self.acceptance {
            Some(a) if !a.passed() => EXIT_ACCEPTANCE,
            _ => EXIT_OK,
        }
    }
}

/// CSV row for one ladder epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub replica_id: u64,
    pub value: u64,
    pub censored: bool,
    pub rho: f64,
    pub cap: u64,
}

/// CSV row for one RNC coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RncRow {
    pub replica_id: u64,
    pub horizon: u64,
    pub log_value: f64,
    pub stabilized: bool,
}

/// CSV row summarizing one affine trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub replica_id: u64,
    pub return_count: u64,
    pub last_window_min: f64,
    pub median_lognorm_slope: f64,
}

pub const LADDER_CSV: &str = "ladder.csv";
pub const RNC_CSV: &str = "rnc.csv";
pub const TRAJECTORY_CSV: &str = "trajectories.csv";
pub const REPORT_JSON: &str = "report.json";

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Everything an experiment produced before it is written out.
#[derive(Default)]
struct Output {
    estimates: Vec<NamedEstimate>,
    verdicts: Vec<Verdict>,
    acceptance: Option<AcceptanceSummary>,
    ladder: Vec<LadderRow>,
    rnc: Vec<RncRow>,
    trajectories: Vec<TrajectoryRow>,
}

impl Output {
    fn estimate(&mut self, name: impl Into<String>, estimate: EstimateReport) {
        self.estimates.push(NamedEstimate {
            name: name.into(),
            estimate,
        });
    }

    fn verdict(&mut self, name: impl Into<String>, outcome: impl Into<String>, details: &[(&str, f64)]) {
        self.verdicts.push(Verdict {
            name: name.into(),
            outcome: outcome.into(),
            details: details.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        });
    }
}

/// Files written by [`run`].
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub report_path: PathBuf,
    pub csv_paths: Vec<PathBuf>,
}

/// Runs an experiment and writes `report.json` plus its CSV files.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let start = Instant::now();
    let streams = Streams::new(config.seed).with_workers(config.workers);
    let model = match (&config.model, config.calibrate) {
        (Some(m), Some(tol)) => Some(calibrate_centring(
            m,
            tol,
            &CalibrationBudget::default(),
            &streams.reseed("calibration"),
        )?),
        (m, _) => m.clone(),
    };
    let out = execute(config, model.as_ref(), &streams)?;
    let report = RunReport {
        artifact: env!("CARGO_PKG_NAME").to_string(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        model,
        estimates: out.estimates,
        verdicts: out.verdicts,
        acceptance: out.acceptance,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    let dir = config.resolved_output_dir();
    fs::create_dir_all(&dir)?;
    let mut csv_paths = Vec::new();
    if !out.ladder.is_empty() {
        csv_paths.push(dir.join(LADDER_CSV));
        write_csv(csv_paths.last().expect("pushed"), &out.ladder)?;
    }
    if !out.rnc.is_empty() {
        csv_paths.push(dir.join(RNC_CSV));
        write_csv(csv_paths.last().expect("pushed"), &out.rnc)?;
    }
    if !out.trajectories.is_empty() {
        csv_paths.push(dir.join(TRAJECTORY_CSV));
        write_csv(csv_paths.last().expect("pushed"), &out.trajectories)?;
    }
    let report_path = dir.join(REPORT_JSON);
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(&report_path, text)?;
    Ok(RunOutcome {
        report,
        report_path,
        csv_paths,
    })
}

fn require_model(model: Option<&ModelSpec>) -> Result<&ModelSpec> {
    model.ok_or_else(|| Error::Config("this experiment needs a model".into()))
}

fn execute(cfg: &ExperimentConfig, model: Option<&ModelSpec>, streams: &Streams) -> Result<Output> {
    let mut out = Output::default();
    match cfg.experiment {
        ExperimentKind::Lyapunov => {
            let spec = require_model(model)?;
            out.estimate("lyapunov_norm", estimate_lyapunov(spec, cfg.horizon, cfg.replicas.max(2), streams)?);
            out.estimate(
                "lyapunov_walk",
                estimate_lyapunov_walk(spec, cfg.horizon, cfg.replicas.max(2), cfg.burn_in, streams)?,
            );
        }
        ExperimentKind::Sigma2 => {
            let spec = require_model(model)?;
            out.estimate(
                "sigma2_replicas",
                estimate_sigma2(spec, cfg.horizon, cfg.replicas.max(2), cfg.burn_in, streams)?,
            );
            out.estimate(
                "sigma2_batch_means",
                estimate_sigma2_batch_means(
                    spec,
                    cfg.replicas.max(2),
                    cfg.horizon,
                    cfg.burn_in,
                    &mut streams.stream("batch-means", 0),
                )?,
            );
        }
        ExperimentKind::LadderTail => {
            let spec = require_model(model)?;
            let samples = acceptance::ladder_samples(spec, cfg.rho, cfg.cap, cfg.replicas, cfg.burn_in, streams)?;
            out.ladder = samples
                .iter()
                .enumerate()
                .map(|(i, s)| LadderRow {
                    replica_id: i as u64,
                    value: s.steps(),
                    censored: s.is_censored(),
                    rho: s.rho,
                    cap: s.cap,
                })
                .collect();
            let fit = fit_tail_exponent(&samples, acceptance::LADDER_FIT_START, acceptance::LADDER_MIN_TAIL)?;
            let slope = fit.point;
            out.estimate("survival_slope", fit);
            let moment: Vec<f64> = samples.iter().map(|s| (s.steps() as f64).powf(cfg.alpha)).collect();
            let mut rep = EstimateReport::from_moments(&MomentAccumulator::from_slice(&moment))
                .with_meta("alpha", cfg.alpha)
                .with_meta("lower_bound", "censored samples enter at the cap");
            rep.censored_fraction = samples.iter().filter(|s| s.is_censored()).count() as f64 / samples.len() as f64;
            out.estimate("ladder_alpha_moment", rep);
            out.verdict(
                "tail_exponent",
                if (slope + 0.5).abs() <= 0.07 { "consistent_with_one_half" } else { "not_one_half" },
                &[("slope", slope)],
            );
        }
        ExperimentKind::Contraction => {
            let spec = require_model(model)?;
            let fit = fit_contraction_rate(spec, cfg.horizon, cfg.replicas, streams)?;
            let status = serde_json::to_value(fit.status)?;
            out.verdict(
                "contraction",
                status.as_str().unwrap_or("unknown"),
                &[("rate", fit.report.point), ("rate_stderr", fit.report.stderr)],
            );
            out.estimate("contraction_rate", fit.report);
        }
        ExperimentKind::RncMoments => {
            let spec = require_model(model)?;
            let checkpoints = nested_horizons(cfg.horizon);
            let sampler = spec.sampler()?;
            let per_replica = streams
                .map("rnc", cfg.replicas, |_, rng| {
                    let v0 = sampler.invariant_direction(rng, cfg.burn_in);
                    sampler.rnc_profile(&v0, &checkpoints, rng)
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            for (i, samples) in per_replica.iter().enumerate() {
                for s in samples {
                    out.rnc.push(RncRow {
                        replica_id: i as u64,
                        horizon: s.horizon,
                        log_value: s.log_value,
                        stabilized: s.stabilized,
                    });
                }
            }
            let flat: Vec<_> = per_replica.into_iter().flatten().collect();
            for curve in rnc_moment_curve(&flat, &cfg.beta_grid)? {
                let change = curve.last_relative_change().unwrap_or(f64::NAN);
                let unstabilized = curve.points.last().map(|p| p.unstabilized_fraction).unwrap_or(f64::NAN);
                for p in &curve.points {
                    out.estimate(format!("rnc_moment_beta_{}_h_{}", curve.beta, p.horizon), p.estimate.clone());
                }
                out.verdict(
                    format!("rnc_beta_{}", curve.beta),
                    if curve.unreliable {
                        "unreliable"
                    } else if change < 0.05 && unstabilized <= 0.05 {
                        "stabilized"
                    } else {
                        "not_stabilized"
                    },
                    &[
                        ("last_relative_change", change),
                        ("unstabilized_fraction", unstabilized),
                    ],
                );
            }
        }
        ExperimentKind::Recurrence => {
            let spec = require_model(model)?;
            let (verdict, stats) =
                acceptance::recurrence_verdict(spec, cfg.horizon, cfg.replicas, cfg.radius, &cfg.thresholds, streams)?;
            out.trajectories = stats
                .iter()
                .enumerate()
                .map(|(i, s)| TrajectoryRow {
                    replica_id: i as u64,
                    return_count: s.return_count,
                    last_window_min: s.last_window_min(),
                    median_lognorm_slope: s.lognorm_slope(),
                })
                .collect();
            let class = serde_json::to_value(verdict.class)?;
            let e = &verdict.evidence;
            out.verdict(
                "recurrence",
                class.as_str().unwrap_or("unknown"),
                &[
                    ("late_return_frequency", e.late_return_frequency),
                    ("late_return_stderr", e.late_return_stderr),
                    ("median_slope", e.median_slope),
                    ("median_slope_stderr", e.median_slope_stderr),
                    ("fraction_last_window_outside", e.fraction_last_window_outside),
                ],
            );
        }
        ExperimentKind::Rk1Suite => {
            let spec = require_model(model)?;
            if !matches!(spec.family, Family::RankOne { .. }) {
                return Err(Error::Config(format!("rk1_suite needs a rank-one model, got {}", spec.family_name())));
            }
            rk1_suite(cfg, spec, streams, &mut out)?;
        }
        ExperimentKind::ExteriorSuite => {
            let spec = require_model(model)?;
            if !spec.is_invertible() {
                return Err(Error::Config(format!(
                    "exterior_suite needs an invertible model, got {}",
                    spec.family_name()
                )));
            }
            let pd = estimate_proximal_dimension(spec, cfg.horizon, cfg.replicas.max(2), true, streams)?;
            for (i, e) in pd.exponents.iter().enumerate() {
                out.estimate(format!("exponent_{}", i + 1), e.clone());
            }
            for (i, g) in pd.gaps.iter().enumerate() {
                out.estimate(format!("gap_1_{}", i + 2), g.clone());
            }
            for (r, a) in pd.lift_additivity.iter().enumerate() {
                out.estimate(format!("lift_additivity_{}", r + 1), a.clone());
            }
            out.verdict(
                "proximal_dimension",
                pd.r_hat.map(|r| r.to_string()).unwrap_or_else(|| "unresolved".into()),
                &[("r_hat", pd.r_hat.map(|r| r as f64).unwrap_or(f64::NAN))],
            );
        }
        ExperimentKind::AcceptanceAll => {
            let budget = if cfg.quick { Budget::Quick } else { Budget::Full };
            let summary = acceptance::run_all(cfg.seed, budget, cfg.workers, |_| {});
            for c in &summary.criteria {
                out.verdict(
                    format!("criterion_{}", c.id),
                    if c.passed { "pass" } else { "fail" },
                    &[],
                );
            }
            out.acceptance = Some(summary);
        }
    }
    Ok(out)
}

/// `horizon/100, horizon/10, horizon`, dropping zeros and duplicates.
fn nested_horizons(horizon: u64) -> Vec<u64> {
    let mut h: Vec<u64> = [horizon / 100, horizon / 10, horizon].into_iter().filter(|x| *x > 0).collect();
    h.dedup();
    h
}

fn rk1_suite(cfg: &ExperimentConfig, spec: &ModelSpec, streams: &Streams, out: &mut Output) -> Result<()> {
    let d = spec.dim;
    let starts: Vec<SignedRay> = (0..d.min(3))
        .map(|i| {
            SignedRay::new(
                i as f64 - 1.0,
                crate::projective::canonicalize(&crate::linalg::Vector::basis(d, i)),
            )
        })
        .collect();
    let st = two_step_stationarity_check(spec, &starts, cfg.replicas.max(2), 2, streams)?;
    out.verdict(
        "two_step_stationarity",
        if st.passed() { "pass" } else { "fail" },
        &[("max_ks", st.max_ks), ("threshold", st.threshold)],
    );
    let weight = WeightN::estimate(spec, 1.5, 2.0, 1000, &mut streams.stream("weight", 0))?;
    let mut worst = 0.0f64;
    let mut holds = true;
    for (k, z) in starts.iter().enumerate() {
        for b in pn_weight_check(spec, &weight, z, 5, cfg.replicas.max(2), &streams.reseed(&format!("pn-{k}")))? {
            holds &= b.holds();
            worst = worst.max(b.pn_n.point / b.n_at_start);
        }
    }
    out.verdict("pn_weight_bound", if holds { "pass" } else { "fail" }, &[("worst_ratio", worst)]);
    let lag = increment_correlation(spec, 2, cfg.replicas.max(2), streams)?;
    out.verdict(
        "lag2_independence",
        if lag.correlation.abs() <= 3.0 * lag.stderr { "pass" } else { "fail" },
        &[("correlation", lag.correlation), ("stderr", lag.stderr)],
    );
    let closed = rk1_sigma2_closed_form(spec, cfg.replicas.max(10), streams)?;
    let walk = estimate_sigma2(spec, cfg.horizon, cfg.replicas.max(2), 0, streams)?;
    let combined = (closed.stderr.powi(2) + walk.stderr.powi(2)).sqrt();
    out.verdict(
        "sigma2_agreement",
        if (closed.point - walk.point).abs() <= 3.0 * combined { "pass" } else { "fail" },
        &[("closed_form", closed.point), ("trajectory", walk.point)],
    );
    out.estimate("sigma2_closed_form", closed);
    out.estimate("sigma2_trajectory", walk);
    Ok(())
}

/// Process exit status for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidModel(_)
        | Error::InvalidArgument(_)
        | Error::DimensionMismatch { .. }
        | Error::Hypothesis(_)
        | Error::Json(_)
        | Error::Io(_)
        | Error::Csv(_) => EXIT_CONFIG,
        Error::NonUnitVector(_)
        | Error::NegativeEntry { .. }
        | Error::ZeroPoint
        | Error::CalibrationFailed { .. }
        | Error::NoContraction(_)
        | Error::InsufficientData(_)
        | Error::Numerical(_) => EXIT_NUMERICAL,
    }
}

/// Hand-written description of the config format.
pub fn config_schema() -> serde_json::Value {
    let experiments: Vec<&str> = ExperimentKind::ALL.iter().map(|e| e.name()).collect();
    serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "unknown_keys": "rejected",
        "fields": {
            "schema_version": {"type": "integer", "required": true, "value": SCHEMA_VERSION},
            "experiment": {"type": "string", "required": true, "one_of": experiments},
            "model": {"type": "object", "required": "all experiments except acceptance_all",
                "fields": {
                    "family": {"type": "object", "tag": "type", "one_of": [
                        {"type": "similarity", "mean_log_a": "number", "sigma_log_a": "number >= 0"},
                        {"type": "rank_one", "mean_log_a": "number", "sigma_log_a": "number >= 0",
                            "directions": {"type": "uniform | concentrated{spread} | fixed{w_tilde, w}"}},
                        {"type": "invertible_proximal", "matrices": "list of d x d matrices", "weights": "list of numbers", "jitter": "number >= 0"},
                        {"type": "nonnegative", "mean_log_entry": "number", "sigma_log_entry": "number >= 0"},
                        {"type": "diagonal_counterexample", "s": "number >= 0"},
                        {"type": "permutation_counterexample", "lambda": "number > 1"},
                        {"type": "deterministic", "matrix": "d x d matrix"}
                    ]},
                    "dim": {"type": "integer", "range": [1, crate::linalg::MAX_DIM]},
                    "log_scale_shift": {"type": "number", "default": 0.0},
                    "b_law": {"type": "object", "tag": "type", "default": {"type": "gaussian", "sigma": 1.0}, "one_of": [
                        {"type": "gaussian", "sigma": "number >= 0", "mean": "optional list"},
                        {"type": "heavy_log_tail", "sigma": "number >= 0", "pareto_index": "number > 0"},
                        {"type": "fixed", "vector": "list"}
                    ]}
                }},
            "calibrate": {"type": "number", "default": null, "meaning": "centre the model to this Lyapunov tolerance first"},
            "horizon": {"type": "integer", "default": default_horizon()},
            "replicas": {"type": "integer", "default": default_replicas()},
            "cap": {"type": "integer", "default": default_cap()},
            "rho": {"type": "number", "default": default_rho(), "range": "(0, 1)"},
            "radius": {"type": "number", "default": default_radius()},
            "beta_grid": {"type": "list of numbers", "default": default_beta_grid()},
            "alpha": {"type": "number", "default": default_alpha()},
            "thresholds": {"type": "object", "default": RecurrenceThresholds::default()},
            "burn_in": {"type": "integer", "default": default_burn_in()},
            "seed": {"type": "integer", "required": true},
            "workers": {"type": "integer", "default": default_workers()},
            "output_dir": {"type": "string", "default": "affrec-out", "env_override": OUTPUT_DIR_ENV},
            "quick": {"type": "boolean", "default": false}
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::reference;

    fn base(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig::new(kind, Some(reference::similarity(2, 1.0)), 5)
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"schema_version": 1, "experiment": "lyapunov", "seed": 1, "horizn": 5,
            "model": {"family": {"type": "similarity", "mean_log_a": 0.0, "sigma_log_a": 1.0}, "dim": 2}}"#;
        assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))));
    }

    #[test]
    fn seed_is_mandatory() {
        let text = r#"{"schema_version": 1, "experiment": "acceptance_all"}"#;
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn config_round_trips() {
        let cfg = base(ExperimentKind::Recurrence);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut cfg = base(ExperimentKind::LadderTail);
        cfg.rho = 1.0;
        assert_eq!(exit_code(&cfg.validate().unwrap_err()), EXIT_CONFIG);
        let mut cfg = base(ExperimentKind::Lyapunov);
        cfg.model = None;
        assert!(cfg.validate().is_err());
        let mut cfg = base(ExperimentKind::Lyapunov);
        cfg.schema_version = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn nested_horizons_skip_zeros() {
        assert_eq!(nested_horizons(10_000), vec![100, 1000, 10_000]);
        assert_eq!(nested_horizons(50), vec![5, 50]);
        assert_eq!(nested_horizons(1), vec![1]);
    }

    #[test]
    fn schema_lists_every_experiment() {
        let s = config_schema();
        let listed = s["fields"]["experiment"]["one_of"].as_array().unwrap().len();
        assert_eq!(listed, ExperimentKind::ALL.len());
    }
}
