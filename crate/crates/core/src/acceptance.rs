//! The acceptance suite: eleven criteria covering the linear algebra, the
//! ladder tail, RNC coefficients, contraction, recurrence, the rank-one
//! identities, block decomposition, the max-moment bound, the proximal
//! dimension and determinism.
//!
//! Every criterion draws from its own reseeded streams, so criteria can be
//! run alone or in any order with the same outcome.

use std::cell::RefCell;
use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    autocorrelation, classify_recurrence, estimate_lyapunov_walk, estimate_sigma2, fit_contraction_rate,
    fit_tail_exponent, max_moment_bound_check, rnc_moment_curve, ConstantSequence, ContractionStatus,
    ExponentialSequence, MaxSequence, MomentAccumulator, MovingMaxSequence, RecurrenceClass,
    RecurrenceThresholds, TauLaw,
};
use crate::exterior::{estimate_proximal_dimension, wedge_norm_check};
use crate::linalg::{operator_norm, LogScaledMatrix, Matrix, Vector};
use crate::models::{calibrate_centring, reference, uniform_unit_vector, CalibrationBudget, ModelSpec};
use crate::projective::{canonicalize, sine_distance};
use crate::rk1::{
    increment_correlation, pn_weight_check, rk1_sigma2_closed_form, two_step_stationarity_check, SignedRay,
    WeightN,
};
use crate::simulation::{block_decomposition, Metric, TrajectoryConfig};
use crate::stream::Streams;

pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Full,
    /// Smaller sample sizes and `10⁵`-step recurrence runs, same tolerances.
    Quick,
}

impl Budget {
    fn pick<T>(self, full: T, quick: T) -> T {
        match self {
            Budget::Full => full,
            Budget::Quick => quick,
        }
    }
}

/// Radius of the return ball.
pub const RADIUS: f64 = 20.0;
/// Standard deviation of the Gaussian translations in the recurrence runs.
pub const TRANSLATION_SCALE: f64 = 1e-4;

/// One comparison inside a criterion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub label: String,
    pub value: f64,
    /// Human-readable rule, e.g. `< 0.95`.
    pub rule: String,
    pub passed: bool,
}

impl Check {
    fn below(label: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            label: label.into(),
            value,
            rule: format!("< {limit:.6e}"),
            passed: value < limit,
        }
    }

    fn at_most(label: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            label: label.into(),
            value,
            rule: format!("<= {limit:.6e}"),
            passed: value <= limit,
        }
    }

    fn above(label: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            label: label.into(),
            value,
            rule: format!("> {limit:.6e}"),
            passed: value > limit,
        }
    }

    fn within(label: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        Check {
            label: label.into(),
            value,
            rule: format!("within {tol:.6e} of {target}"),
            passed: (value - target).abs() <= tol,
        }
    }

    fn flag(label: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        Check {
            label: label.into(),
            value: if ok { 1.0 } else { 0.0 },
            rule: detail.into(),
            passed: ok,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub error: Option<String>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl CriterionResult {
    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {} {:<34} ({:.1} s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64()
        )?;
        if let Some(e) = &self.error {
            write!(f, "\n    error: {e}")?;
        }
        for c in self.failed_checks() {
            write!(f, "\n    {}: {:.6e} (want {})", c.label, c.value, c.rule)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceSummary {
    pub seed: u64,
    pub budget: Budget,
    pub criteria: Vec<CriterionResult>,
}

impl AcceptanceSummary {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn failing_ids(&self) -> Vec<u8> {
        self.criteria.iter().filter(|c| !c.passed).map(|c| c.id).collect()
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        for c in &self.criteria {
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out.push_str(&format!(
            "{} of {} criteria passed",
            self.criteria.iter().filter(|c| c.passed).count(),
            self.criteria.len()
        ));
        out
    }
}

pub const CRITERIA: [(u8, &str); 11] = [
    (1, "linear algebra"),
    (2, "ladder tail exponent"),
    (3, "exact RNC in degenerate models"),
    (4, "RNC moment stabilization"),
    (5, "contraction rates"),
    (6, "recurrence and transience"),
    (7, "rank-one fluctuation identities"),
    (8, "block decomposition"),
    (9, "max-moment bound"),
    (10, "proximal dimension"),
    (11, "determinism"),
];

/// Shared state for one acceptance run: seed, budget and lazily centred
/// reference models.
pub struct Context {
    pub seed: u64,
    pub budget: Budget,
    pub workers: usize,
    proximal: RefCell<Option<ModelSpec>>,
    nonnegative: RefCell<Option<ModelSpec>>,
}

impl Context {
    pub fn new(seed: u64, budget: Budget, workers: usize) -> Self {
        Context {
            seed,
            budget,
            workers: workers.max(1),
            proximal: RefCell::new(None),
            nonnegative: RefCell::new(None),
        }
    }

    fn streams(&self, salt: &str) -> Streams {
        Streams::new(self.seed).with_workers(self.workers).reseed(salt)
    }

    fn calibration(&self) -> (f64, CalibrationBudget) {
        let budget = CalibrationBudget {
            replicas: self.budget.pick(1000, 200),
            max_rounds: 8,
            ..CalibrationBudget::default()
        };
        (self.budget.pick(5e-5, 2e-4), budget)
    }

    fn centred(&self, slot: &RefCell<Option<ModelSpec>>, raw: ModelSpec, salt: &str) -> Result<ModelSpec> {
        if let Some(s) = slot.borrow().as_ref() {
            return Ok(s.clone());
        }
        let (tol, budget) = self.calibration();
        let spec = calibrate_centring(&raw, tol, &budget, &self.streams(salt))?;
        *slot.borrow_mut() = Some(spec.clone());
        Ok(spec)
    }

    /// Centred planar hyperbolic/rotation mixture.
    pub fn proximal_model(&self) -> Result<ModelSpec> {
        self.centred(&self.proximal, raw_proximal_model(), "centre-proximal")
    }

    /// Centred lognormal 2×2 model.
    pub fn nonnegative_model(&self) -> Result<ModelSpec> {
        self.centred(&self.nonnegative, raw_nonnegative_model(), "centre-nonnegative")
    }

    pub fn similarity_model(&self) -> ModelSpec {
        reference::similarity(2, 0.1).with_b_law(reference::gaussian_b(TRANSLATION_SCALE))
    }

    pub fn rank_one_model(&self) -> Result<ModelSpec> {
        let (tol, budget) = self.calibration();
        calibrate_centring(
            &reference::rank_one_concentrated(2, 0.1, 0.15).with_b_law(reference::gaussian_b(TRANSLATION_SCALE)),
            tol,
            &budget,
            &self.streams("centre-rank-one"),
        )
    }
}

pub fn raw_proximal_model() -> ModelSpec {
    reference::invertible_proximal(0.55, 1.0, 0.1).with_b_law(reference::gaussian_b(TRANSLATION_SCALE))
}

pub fn raw_nonnegative_model() -> ModelSpec {
    reference::nonnegative(2, 0.3).with_b_law(reference::gaussian_b(TRANSLATION_SCALE))
}

fn criterion_name(id: u8) -> &'static str {
    CRITERIA.iter().find(|c| c.0 == id).map(|c| c.1).unwrap_or("unknown")
}

/// Runs one criterion; errors are reported as a failure, not propagated.
pub fn run_criterion(id: u8, ctx: &Context) -> CriterionResult {
    let start = Instant::now();
    let outcome = match id {
        1 => linear_algebra(ctx),
        2 => ladder_tail(ctx),
        3 => exact_rnc(ctx),
        4 => rnc_stabilization(ctx),
        5 => contraction(ctx),
        6 => recurrence(ctx),
        7 => rank_one_identities(ctx),
        8 => blocks(ctx),
        9 => max_moment_bound(ctx),
        10 => proximal_dimension(ctx),
        11 => determinism(ctx),
        _ => Err(Error::InvalidArgument(format!("no criterion {id}"))),
    };
    let (checks, error) = match outcome {
        Ok(c) => (c, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    CriterionResult {
        id,
        name: criterion_name(id).to_string(),
        passed: error.is_none() && !checks.is_empty() && checks.iter().all(|c| c.passed),
        checks,
        error,
        elapsed: start.elapsed(),
    }
}

/// Runs the given criteria in order, calling `report` after each.
pub fn run_selected(ids: &[u8], ctx: &Context, mut report: impl FnMut(&CriterionResult)) -> AcceptanceSummary {
    let criteria = ids
        .iter()
        .map(|&id| {
            let r = run_criterion(id, ctx);
            report(&r);
            r
        })
        .collect();
    AcceptanceSummary {
        seed: ctx.seed,
        budget: ctx.budget,
        criteria,
    }
}

pub fn run_all(seed: u64, budget: Budget, workers: usize, report: impl FnMut(&CriterionResult)) -> AcceptanceSummary {
    let ids: Vec<u8> = CRITERIA.iter().map(|c| c.0).collect();
    run_selected(&ids, &Context::new(seed, budget, workers), report)
}

fn gaussian_matrix<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(d, |_, _| StandardNormal.sample(rng))
}

/// A unit vector, half the time a small perturbation of `near`.
fn nearby_unit<R: Rng + ?Sized>(near: &Vector, rng: &mut R) -> Vector {
    let d = near.dim();
    if rng.random::<bool>() {
        return uniform_unit_vector(d, rng);
    }
    let eps = 10f64.powf(-rng.random_range(1.0..8.0));
    let g = uniform_unit_vector(d, rng);
    let v = near.axpy(eps, &g);
    v.scale(1.0 / v.norm())
}

fn linear_algebra(ctx: &Context) -> Result<Vec<Check>> {
    let streams = ctx.streams("criterion-1");
    // log-scaled products against direct products, k ≤ 30
    let product_errors = streams.map("products", 2000, |i, rng| {
        let d = 2 + (i % 3) as usize;
        let k = rng.random_range(1..=30);
        let mut direct = Matrix::identity(d);
        let mut scaled = LogScaledMatrix::identity(d);
        for _ in 0..k {
            let a = gaussian_matrix(d, rng).scale(rng.random_range(-2.0f64..2.0).exp());
            direct = a.mul(&direct);
            scaled.left_multiply(&a);
        }
        scaled.to_matrix().sub(&direct).frobenius_norm() / direct.frobenius_norm()
    });
    let max_product = product_errors.iter().copied().fold(0.0, f64::max);

    let wedge = streams.map("wedge", 10_000, |_, rng| {
        let d = rng.random_range(1..=4);
        let r = rng.random_range(1..=d);
        wedge_norm_check(&gaussian_matrix(d, rng), r).map(|c| c.relative_error)
    });
    let wedge: Vec<f64> = wedge.into_iter().collect::<Result<_>>()?;
    let max_wedge = wedge.iter().copied().fold(0.0, f64::max);

    let axiom_violations: u64 = streams
        .map("metric-axioms", 10_000, |_, rng| {
            let d = rng.random_range(2..=4);
            let u = uniform_unit_vector(d, rng);
            let v = nearby_unit(&u, rng);
            let w = nearby_unit(&v, rng);
            let (uv, vu, vw, uw) = (
                sine_distance(&u, &v),
                sine_distance(&v, &u),
                sine_distance(&v, &w),
                sine_distance(&u, &w),
            );
            let mut bad = 0u64;
            bad += u64::from(!(0.0..=1.0).contains(&uv));
            bad += u64::from(sine_distance(&u, &u) > 1e-15);
            bad += u64::from(sine_distance(&u, &u.scale(-1.0)) > 1e-15);
            bad += u64::from((uv - vu).abs() > 1e-12 * uv.max(1e-300) + 1e-15);
            bad += u64::from(uw > uv + vw + 1e-12);
            bad
        })
        .into_iter()
        .sum();

    let inequality_violations: u64 = streams
        .map("gain-inequality", 100_000, |_, rng| {
            let d = rng.random_range(2..=4);
            let a = gaussian_matrix(d, rng);
            let v = uniform_unit_vector(d, rng);
            let u = nearby_unit(&v, rng);
            let av = a.mul_vec(&v).norm();
            let au = a.mul_vec(&u).norm();
            let lhs = (au / av).ln().max(0.0);
            let rhs = std::f64::consts::SQRT_2 * operator_norm(&a) / av * sine_distance(&u, &v);
            u64::from(lhs > rhs * (1.0 + 1e-10) + 1e-14)
        })
        .into_iter()
        .sum();

    Ok(vec![
        Check::at_most("product relative error (max over 2000)", max_product, 1e-8),
        Check::at_most("wedge norm relative error (max over 10^4)", max_wedge, 1e-6),
        Check::at_most("sine metric axiom violations (10^4 triples)", axiom_violations as f64, 0.0),
        Check::at_most("gain inequality violations (10^5 triples)", inequality_violations as f64, 0.0),
    ])
}

/// Ladder samples from a stationary start.
pub fn ladder_samples(
    spec: &ModelSpec,
    rho: f64,
    cap: u64,
    count: u64,
    burn_in: usize,
    streams: &Streams,
) -> Result<Vec<crate::simulation::LadderSample>> {
    if !(rho > 0.0 && rho < 1.0) || cap == 0 {
        return Err(Error::InvalidArgument("need rho in (0, 1) and a positive cap".into()));
    }
    let sampler = spec.sampler()?;
    Ok(streams.map("ladder", count, |_, rng| {
        let v0 = sampler.invariant_direction(rng, burn_in);
        sampler.ladder_time(&v0, rho, cap, rng)
    }))
}

pub const LADDER_FIT_START: u64 = 16;
pub const LADDER_MIN_TAIL: usize = 50;

fn ladder_tail(ctx: &Context) -> Result<Vec<Check>> {
    let streams = ctx.streams("criterion-2");
    let count = ctx.budget.pick(100_000, 20_000);
    let cap = ctx.budget.pick(100_000, 20_000);
    let rho = (-1.0f64).exp();
    let mut checks = Vec::new();
    for (label, spec) in [
        ("similarity", reference::similarity(2, 1.0)),
        ("rank-one", reference::rank_one_uniform(2, 1.0)),
    ] {
        let samples = ladder_samples(&spec, rho, cap, count, 0, &streams.reseed(label))?;
        let fit = fit_tail_exponent(&samples, LADDER_FIT_START, LADDER_MIN_TAIL)?;
        checks.push(Check::within(format!("{label} survival slope"), fit.point, -0.5, 0.07));
    }
    Ok(checks)
}

fn exact_rnc(ctx: &Context) -> Result<Vec<Check>> {
    let streams = ctx.streams("criterion-3");
    let n = 10_000;
    let sim = reference::similarity(2, 1.0).sampler()?;
    let sim_max = streams
        .map("similarity", n, |_, rng| {
            let v0 = canonicalize(&uniform_unit_vector(2, rng));
            sim.rnc_profile(&v0, &[100], rng).map(|s| s[0].log_value.abs())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let spec = reference::rank_one_uniform(2, 1.0);
    let rk1 = spec.sampler()?;
    let rk1_max = streams
        .map("rank-one", n, |i, rng| {
            let v = uniform_unit_vector(2, rng);
            let v0 = canonicalize(&v);
            let unit = v0.representative().expect("nonzero").clone();
            let first = rk1.sample_rank_one(&mut rng.clone()).expect("rank one");
            let expected = -first.w_tilde.dot(&unit).abs().ln();
            let horizon = 2 + i % 50;
            rk1.rnc_profile(&v0, &[horizon], rng).map(|s| (s[0].log_value - expected).abs())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(vec![
        Check::at_most("similarity |ln C1| (max over 10^4)", sim_max, 1e-10),
        Check::at_most("rank-one |ln C1 + ln|<w~1, v0>|| (max over 10^4)", rk1_max, 1e-9),
    ])
}

pub const RNC_HORIZONS: [u64; 3] = [100, 1_000, 10_000];

fn rnc_stabilization(ctx: &Context) -> Result<Vec<Check>> {
    let streams = ctx.streams("criterion-4");
    let count = ctx.budget.pick(2000, 500);
    let mut checks = Vec::new();
    for (label, spec) in [("proximal", ctx.proximal_model()?), ("nonnegative", ctx.nonnegative_model()?)] {
        let sampler = spec.sampler()?;
        let samples: Vec<_> = streams
            .map(label, count, |_, rng| {
                let v0 = sampler.invariant_direction(rng, 200);
                sampler.rnc_profile(&v0, &RNC_HORIZONS, rng)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let curve = rnc_moment_curve(&samples, &[3.5])?.remove(0);
        let change = curve
            .last_relative_change()
            .ok_or_else(|| Error::InsufficientData("moment curve needs two horizons".into()))?;
        let last = curve.points.last().expect("three horizons");
        checks.push(Check::below(format!("{label} beta=3.5 relative change"), change, 0.05));
        checks.push(Check::above(
            format!("{label} stabilized fraction"),
            1.0 - last.unstabilized_fraction,
            0.95,
        ));
    }
    Ok(checks)
}

fn contraction(ctx: &Context) -> Result<Vec<Check>> {
    let streams = ctx.streams("criterion-5");
    let (steps, pairs) = (200, 1000);
    let mut checks = Vec::new();
    for (label, spec) in [("proximal", ctx.proximal_model()?), ("nonnegative", ctx.nonnegative_model()?)] {
        let fit = fit_contraction_rate(&spec, steps, pairs, &streams.reseed(label))?;
        checks.push(Check::below(format!("{label} rate"), fit.report.point, 0.95));
        checks.push(Check::below(
            format!("{label} rate + 3 stderr"),
            fit.report.point + 3.0 * fit.report.stderr,
            1.0,
        ));
        if label == "nonnegative" {
            checks.push(Check::flag("nonnegative metric is Hennion", fit.metric == Metric::Hennion, "Hennion"));
            checks.push(Check::at_most(
                "sine vs 2x Hennion comparison violations",
                fit.comparison_violations as f64,
                0.0,
            ));
        }
    }
    let rk1 = fit_contraction_rate(&reference::rank_one_uniform(2, 1.0), steps, pairs, &streams.reseed("rank-one"))?;
    checks.push(Check::flag(
        "rank-one fit reports collapse",
        rk1.status == ContractionStatus::Collapse,
        "collapse",
    ));
    checks.push(Check::at_most(
        "rank-one mean distance after one step (rounding only)",
        rk1.mean_distances.first().copied().unwrap_or(f64::NAN),
        1e-14,
    ));
    let sim = fit_contraction_rate(&reference::similarity(2, 1.0), steps, pairs, &streams.reseed("similarity"))?;
    checks.push(Check::flag(
        "similarity shows no contraction",
        sim.status == ContractionStatus::NoContraction,
        "no contraction",
    ));
    Ok(checks)
}

/// Recurrence verdict for one model over `count` trajectories from the origin.
pub fn recurrence_verdict(
    spec: &ModelSpec,
    n_steps: u64,
    count: u64,
    radius: f64,
    thresholds: &RecurrenceThresholds,
    streams: &Streams,
) -> Result<(crate::estimators::RecurrenceVerdict, Vec<crate::simulation::TrajectoryStats>)> {
    let sampler = spec.sampler()?;
    let cfg = TrajectoryConfig::new(n_steps, radius);
    let x0 = Vector::zeros(spec.dim);
    let stats = streams
        .map("trajectory", count, |_, rng| sampler.affine_trajectory(&x0, &cfg, rng))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok((classify_recurrence(&stats, radius, thresholds)?, stats))
}

fn recurrence(ctx: &Context) -> Result<Vec<Check>> {
    let streams = ctx.streams("criterion-6");
    let n_steps = ctx.budget.pick(1_000_000, 100_000);
    let count = 200;
    let thresholds = RecurrenceThresholds::default();
    let b = reference::gaussian_b(TRANSLATION_SCALE);
    let positives = [
        ("similarity", ctx.similarity_model()),
        ("rank-one", ctx.rank_one_model()?),
        ("proximal", ctx.proximal_model()?),
        ("nonnegative", ctx.nonnegative_model()?),
    ];
    let mut checks = Vec::new();

    // centring of the positive models, with an uncentred negative control
    let (tol, _) = ctx.calibration();
    let (gn, gm) = ctx.budget.pick((100_000, 100), (20_000, 100));
    for (label, spec) in &positives {
        let g = estimate_lyapunov_walk(spec, gn, gm, 200, &streams.reseed(&format!("centring-{label}")))?;
        checks.push(Check::at_most(
            format!("{label} |lyapunov| - 3 stderr"),
            g.point.abs() - 3.0 * g.stderr,
            tol,
        ));
    }
    let control = raw_proximal_model();
    let g = estimate_lyapunov_walk(&control, gn, gm, 200, &streams.reseed("centring-control"))?;
    checks.push(Check::above(
        "uncentred control |lyapunov| - 3 stderr (must be detected)",
        g.point.abs() - 3.0 * g.stderr,
        tol,
    ));

    for (label, spec) in &positives {
        let (v, _) = recurrence_verdict(spec, n_steps, count, RADIUS, &thresholds, &streams.reseed(label))?;
        checks.push(Check::flag(
            format!("{label} recurrent-like (late return frequency {:.4})", v.evidence.late_return_frequency),
            v.class == RecurrenceClass::RecurrentLike,
            "recurrent-like",
        ));
    }
    for (label, spec) in [
        ("diagonal", reference::diagonal_counterexample(0.3).with_b_law(b.clone())),
        ("permutation", reference::permutation_counterexample(2.0).with_b_law(b.clone())),
    ] {
        let (v, _) = recurrence_verdict(&spec, n_steps, count, RADIUS, &thresholds, &streams.reseed(label))?;
        checks.push(Check::flag(
            format!("{label} transient-like (late return frequency {:.4})", v.evidence.late_return_frequency),
            v.class == RecurrenceClass::TransientLike,
            "transient-like",
        ));
    }
    Ok(checks)
}

fn rank_one_identities(ctx: &Context) -> Result<Vec<Check>> {
    let streams = ctx.streams("criterion-7");
    let spec = reference::rank_one_uniform(2, 1.0);
    let n = ctx.budget.pick(100_000, 20_000);
    let starts = [
        SignedRay::new(0.0, canonicalize(&Vector::basis(2, 0))),
        SignedRay::new(2.0, canonicalize(&Vector::from_slice(&[1.0, 1.0]))),
        SignedRay::new(-1.5, canonicalize(&Vector::from_slice(&[0.2, -1.0]))),
    ];
    let st = two_step_stationarity_check(&spec, &starts, n, 2, &streams)?;
    let mut checks = vec![Check::below("two-step max KS", st.max_ks, st.threshold)];

    let weight = WeightN::estimate(&spec, 1.5, 2.0, 1_000, &mut streams.stream("weight", 0))?;
    let outer = ctx.budget.pick(10_000, 4_000);
    let mut pn_ok = true;
    let mut worst = 0.0f64;
    for (k, z) in starts.iter().enumerate() {
        for b in pn_weight_check(&spec, &weight, z, 5, outer, &streams.reseed(&format!("pn-{k}")))? {
            pn_ok &= b.holds();
            worst = worst.max(b.pn_n.point / b.n_at_start);
        }
    }
    checks.push(Check::flag(
        format!("P^n N <= 3 N for n <= 5 (worst ratio {worst:.3})"),
        pn_ok,
        "within Monte Carlo error",
    ));

    let lag = increment_correlation(&spec, 2, n, &streams)?;
    checks.push(Check::at_most(
        "lag-2 increment correlation / stderr",
        lag.correlation.abs() / lag.stderr,
        3.0,
    ));

    let closed = rk1_sigma2_closed_form(&spec, ctx.budget.pick(1_000_000, 200_000), &streams)?;
    let walk = estimate_sigma2(&spec, 1000, ctx.budget.pick(20_000, 5_000), 0, &streams)?;
    let combined = (closed.stderr.powi(2) + walk.stderr.powi(2)).sqrt();
    checks.push(Check::at_most(
        "|closed-form sigma^2 - trajectory sigma^2| / combined stderr",
        (closed.point - walk.point).abs() / combined,
        3.0,
    ));
    Ok(checks)
}

fn blocks(ctx: &Context) -> Result<Vec<Check>> {
    let streams = ctx.streams("criterion-8");
    let spec = ctx.proximal_model()?;
    let rho = (-1.0f64).exp();
    let total = ctx.budget.pick(10_000, 2_000);
    let chunks = 20u64;
    let samples: Vec<_> = streams
        .map("blocks", chunks, |_, rng| {
            block_decomposition(&spec, rho, (total / chunks) as usize, 1000, 200, rng)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let done: Vec<_> = samples.iter().filter(|b| !b.censored).collect();
    if done.len() < 2 {
        return Err(Error::InsufficientData("fewer than two uncensored blocks".into()));
    }
    let norms = MomentAccumulator::from_slice(&done.iter().map(|b| b.log_norm_a_block).collect::<Vec<_>>());
    let rnc = MomentAccumulator::from_slice(&done.iter().map(|b| b.terms.log_rnc_first).collect::<Vec<_>>());
    let violations = done.iter().filter(|b| !b.terms.holds()).count();
    let lengths: Vec<f64> = samples.iter().map(|b| b.block_length as f64).collect();
    let r1 = autocorrelation(&lengths, 1);
    Ok(vec![
        Check::at_most(
            "mean ln|A block| - (ln rho + mean ln C1) - 3 stderr",
            norms.mean() - (rho.ln() + rnc.mean()) - 3.0 * norms.stderr(),
            0.0,
        ),
        Check::at_most("pathwise bound violations (uncensored blocks)", violations as f64, 0.0),
        Check::at_most(
            "|lag-1 autocorrelation of block lengths| * sqrt(n)",
            r1.abs() * (lengths.len() as f64).sqrt(),
            3.0,
        ),
    ])
}

/// (label, sequence, stopping law, alpha, beta)
type MaxMomentConfig = (&'static str, Box<dyn MaxSequence + Sync>, TauLaw, f64, f64);

fn max_moment_bound(ctx: &Context) -> Result<Vec<Check>> {
    let streams = ctx.streams("criterion-9");
    let trials = ctx.budget.pick(100_000, 20_000);
    let boundary_alpha = 0.5;
    let configs: Vec<MaxMomentConfig> = vec![
        ("exponential, constant tau", Box::new(ExponentialSequence(1.0)), TauLaw::Constant { value: 10 }, 1.0, 3.0),
        ("exponential, geometric tau", Box::new(ExponentialSequence(1.0)), TauLaw::Geometric { p: 0.1 }, 0.5, 4.0),
        ("moving max, Pareto tau", Box::new(MovingMaxSequence), TauLaw::Pareto { index: 1.5 }, 1.0, 2.5),
        ("constant, geometric tau", Box::new(ConstantSequence(2.0)), TauLaw::Geometric { p: 0.5 }, 2.0, 2.0),
        (
            "exponential, Pareto tau, near boundary",
            Box::new(ExponentialSequence(1.0)),
            TauLaw::Pareto { index: 0.8 },
            boundary_alpha,
            (1.0 + boundary_alpha) / boundary_alpha * 1.05,
        ),
    ];
    configs
        .into_iter()
        .enumerate()
        .map(|(k, (label, seq, tau, alpha, beta))| {
            let c = max_moment_bound_check(seq.as_ref(), tau, alpha, beta, trials, &streams.reseed(&format!("config-{k}")))?;
            Ok(Check::flag(
                format!("{label} (alpha {alpha}, beta {beta:.4}): lhs {:.4} vs rhs {:.4}", c.lhs.point, c.rhs.point),
                c.passed,
                "lhs <= rhs + 3 combined stderr",
            ))
        })
        .collect()
}

/// Rounding floor for additivity checks whose standard error vanishes.
const ADDITIVITY_FLOOR: f64 = 1e-12;

fn proximal_dimension(ctx: &Context) -> Result<Vec<Check>> {
    let streams = ctx.streams("criterion-10");
    let (n, m) = ctx.budget.pick((10_000, 100), (2_000, 50));
    let mut checks = Vec::new();
    for (label, spec, expected) in [
        ("proximal", ctx.proximal_model()?, 1usize),
        ("similarity d=3", reference::similarity(3, 0.3), 3),
        ("rotations d=2", reference::rotation(2), 2),
    ] {
        let pd = estimate_proximal_dimension(&spec, n, m, true, &streams.reseed(label))?;
        checks.push(Check::flag(
            format!("{label} r_hat = {expected} (got {:?})", pd.r_hat),
            pd.r_hat == Some(expected),
            format!("{expected}"),
        ));
        for rep in &pd.lift_additivity {
            let degree = rep.metadata.get("degree").cloned().unwrap_or_default();
            checks.push(Check::at_most(
                format!("{label} lift additivity, degree {degree}: |diff| - 3 stderr"),
                rep.point.abs() - 3.0 * rep.stderr,
                ADDITIVITY_FLOOR,
            ));
        }
    }
    Ok(checks)
}

fn determinism(ctx: &Context) -> Result<Vec<Check>> {
    let ids: Vec<u8> = (1..=10).collect();
    let run = |workers| {
        let summary = run_selected(&ids, &Context::new(ctx.seed, Budget::Quick, workers), |_| {});
        serde_json::to_string(&summary)
    };
    let one = run(1)?;
    let eight = run(8)?;
    Ok(vec![Check::flag(
        "quick suite: workers 1 and 8 give identical reports",
        one == eight,
        "byte-identical",
    )])
}
