//! Estimators built on the trajectory engine: Lyapunov exponent, walk
//! variance, ladder tail exponent, contraction rate, RNC moment curves,
//! a recurrence classifier and a Monte Carlo check of the max-moment bound.
//!
//! Replicas are reduced in index order, so results do not depend on the
//! number of workers.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::LogScaledMatrix;
use crate::models::{Family, ModelSpec};
use crate::projective::canonicalize;
use crate::simulation::{LadderSample, Metric, RncSample, TrajectoryStats};
use crate::stream::{Stream, Streams};

/// Streaming mean and variance (Welford), mergeable across batches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentAccumulator {
    count: u64,
    mean: f64,
    m2: f64,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut a = Self::new();
        for &x in xs {
            a.push(x);
        }
        a
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Combines two accumulators (Chan et al.).
    pub fn merge(&self, other: &Self) -> Self {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = other.mean - self.mean;
        MomentAccumulator {
            count: n,
            mean: self.mean + delta * nb / n as f64,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n as f64,
        }
    }

    pub fn merge_all(parts: impl IntoIterator<Item = Self>) -> Self {
        parts.into_iter().fold(Self::new(), |acc, p| acc.merge(&p))
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        self.m2 / (self.count - 1) as f64
    }

    pub fn stderr(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Point estimate with its Monte Carlo standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub point: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub censored_fraction: f64,
    pub metadata: BTreeMap<String, String>,
}

impl EstimateReport {
    pub fn new(point: f64, stderr: f64, n_samples: u64) -> Self {
        EstimateReport {
            point,
            stderr,
            n_samples,
            censored_fraction: 0.0,
            metadata: BTreeMap::new(),
        }
    }

    pub fn from_moments(acc: &MomentAccumulator) -> Self {
        Self::new(acc.mean(), acc.stderr(), acc.count())
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    /// `|point - target| ≤ k·stderr + slack`
    pub fn within(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.point - target).abs() <= k * self.stderr + slack
    }
}

/// Ordinary least squares fit of `y` on `x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub n: usize,
}

pub fn ols(points: &[(f64, f64)]) -> Option<OlsFit> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if n > 2 {
        let rss: f64 = points
            .iter()
            .map(|p| {
                let r = p.1 - intercept - slope * p.0;
                r * r
            })
            .sum();
        (rss / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Some(OlsFit {
        slope,
        intercept,
        slope_stderr,
        n,
    })
}

/// Sample autocorrelation at `lag`.
pub fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    if n <= lag + 1 {
        return f64::NAN;
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    let denom: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    let num: f64 = (0..n - lag).map(|i| (xs[i] - m) * (xs[i + lag] - m)).sum();
    num / denom
}

/// Pearson correlation of paired samples.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len()) as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let t = if x[i] <= y[j] { x[i] } else { y[j] };
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// `(1/n)·ln‖A_n⋯A_1‖` averaged over `m` replicas.
pub fn estimate_lyapunov(spec: &ModelSpec, n: u64, m: u64, streams: &Streams) -> Result<EstimateReport> {
    if n == 0 || m < 2 {
        return Err(Error::InvalidArgument("need n ≥ 1 and at least two replicas".into()));
    }
    let sampler = spec.sampler()?;
    let d = spec.dim;
    let vals = streams.map("lyapunov", m, |_, rng| {
        let mut p = LogScaledMatrix::identity(d);
        for _ in 0..n {
            let (a, _b) = sampler.sample_pair(rng);
            p.left_multiply(&a);
            if p.is_zero() {
                break;
            }
        }
        p.log_scale() / n as f64
    });
    if vals.contains(&f64::NEG_INFINITY) {
        return Ok(EstimateReport::new(f64::NEG_INFINITY, 0.0, m).with_meta("horizon", n));
    }
    let acc = MomentAccumulator::from_slice(&vals);
    Ok(EstimateReport::from_moments(&acc).with_meta("horizon", n))
}

/// `S_n/n` averaged over replicas started from the stationary direction.
pub fn estimate_lyapunov_walk(spec: &ModelSpec, n: u64, m: u64, burn_in: usize, streams: &Streams) -> Result<EstimateReport> {
    let finals = walk_endpoints(spec, n, m, burn_in, streams, "lyapunov-walk")?;
    let vals: Vec<f64> = finals.iter().map(|s| s / n as f64).collect();
    Ok(EstimateReport::from_moments(&MomentAccumulator::from_slice(&vals)).with_meta("horizon", n))
}

fn walk_endpoints(spec: &ModelSpec, n: u64, m: u64, burn_in: usize, streams: &Streams, tag: &str) -> Result<Vec<f64>> {
    if n == 0 || m < 2 {
        return Err(Error::InvalidArgument("need n ≥ 1 and at least two replicas".into()));
    }
    let sampler = spec.sampler()?;
    Ok(streams.map(tag, m, |_, rng| {
        let v0 = sampler.invariant_direction(rng, burn_in);
        let mut chain = crate::simulation::DirectionChain::new(&v0);
        for _ in 0..n {
            let (a, _b) = sampler.sample_pair(rng);
            chain.step(&a);
        }
        chain.log_gain()
    }))
}

/// Replica variance of `S_n/√n` with a stationary start.
pub fn estimate_sigma2(spec: &ModelSpec, n: u64, m: u64, burn_in: usize, streams: &Streams) -> Result<EstimateReport> {
    let finals = walk_endpoints(spec, n, m, burn_in, streams, "sigma2")?;
    if finals.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("walk absorbed; variance undefined".into()));
    }
    let xs: Vec<f64> = finals.iter().map(|s| s / (n as f64).sqrt()).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let acc = MomentAccumulator::from_slice(&sq);
    let correction = m as f64 / (m as f64 - 1.0);
    Ok(EstimateReport::new(acc.mean() * correction, acc.stderr() * correction, m)
        .with_meta("horizon", n)
        .with_meta("method", "replica"))
}

/// Batch-means variance along one long stationary walk.
pub fn estimate_sigma2_batch_means<R: Rng + ?Sized>(
    spec: &ModelSpec,
    n_batches: u64,
    batch_len: u64,
    burn_in: usize,
    rng: &mut R,
) -> Result<EstimateReport> {
    if n_batches < 2 || batch_len == 0 {
        return Err(Error::InvalidArgument("need at least two nonempty batches".into()));
    }
    let sampler = spec.sampler()?;
    let v0 = sampler.invariant_direction(rng, burn_in);
    let mut chain = crate::simulation::DirectionChain::new(&v0);
    let mut sums = Vec::with_capacity(n_batches as usize);
    for _ in 0..n_batches {
        let start = chain.log_gain();
        for _ in 0..batch_len {
            let (a, _b) = sampler.sample_pair(rng);
            chain.step(&a);
        }
        sums.push((chain.log_gain() - start) / (batch_len as f64).sqrt());
    }
    let acc = MomentAccumulator::from_slice(&sums);
    let v = acc.variance();
    Ok(EstimateReport::new(v, v * (2.0 / (n_batches as f64 - 1.0)).sqrt(), n_batches * batch_len)
        .with_meta("batch_len", batch_len)
        .with_meta("method", "batch_means"))
}

/// Least-squares slope of `ln P̂(ℓ > n)` against `ln n` on the dyadic grid
/// inside `[n_min, cap/4]`. Grid points with fewer than `min_tail` surviving
/// samples are dropped.
pub fn fit_tail_exponent(samples: &[LadderSample], n_min: u64, min_tail: usize) -> Result<EstimateReport> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no ladder samples".into()));
    }
    let cap = samples.iter().map(|s| s.cap).min().expect("nonempty");
    let total = samples.len() as f64;
    let mut pts = Vec::new();
    let mut n = n_min.max(1).next_power_of_two();
    while n <= cap / 4 {
        let surviving = samples.iter().filter(|s| s.exceeds(n)).count();
        if surviving < min_tail {
            break;
        }
        pts.push(((n as f64).ln(), (surviving as f64 / total).ln()));
        n *= 2;
    }
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "only {} usable grid points for the tail fit",
            pts.len()
        )));
    }
    let fit = ols(&pts).expect("three distinct points");
    let censored = samples.iter().filter(|s| s.is_censored()).count() as f64 / total;
    let mut rep = EstimateReport::new(fit.slope, fit.slope_stderr, samples.len() as u64)
        .with_meta("grid_points", pts.len())
        .with_meta("grid_max", (pts.last().expect("nonempty").0).exp().round());
    rep.censored_fraction = censored;
    if censored > 0.0 {
        rep = rep.with_meta("cap", cap);
    }
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractionStatus {
    /// Distances vanish after one step.
    Collapse,
    /// Exponential contraction with rate separated from 1.
    Exponential,
    NoContraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionFit {
    /// `point` is the per-step rate `ρ̂`.
    pub report: EstimateReport,
    pub status: ContractionStatus,
    pub metric: Metric,
    pub mean_distances: Vec<f64>,
    /// Steps at which the sine distance exceeded twice the Hennion distance.
    pub comparison_violations: u64,
}

/// Distances below this are treated as numerically collapsed.
const DISTANCE_FLOOR: f64 = 1e-12;

/// Fits the exponential decay rate of the mean distance between two
/// directions pushed by the same matrices.
pub fn fit_contraction_rate(spec: &ModelSpec, n: u64, m_pairs: u64, streams: &Streams) -> Result<ContractionFit> {
    if n < 2 || m_pairs < 20 {
        return Err(Error::InvalidArgument("need n ≥ 2 and at least 20 pairs".into()));
    }
    let sampler = spec.sampler()?;
    let metric = if matches!(spec.family, Family::Nonnegative { .. }) {
        Metric::Hennion
    } else {
        Metric::Sine
    };
    let walks = streams.map("contraction", m_pairs, |_, rng| {
        let u = canonicalize(&sampler.uniform_start(rng));
        let v = canonicalize(&sampler.uniform_start(rng));
        sampler.pair_walk(&u, &v, n, metric, rng)
    });
    let walks: Vec<_> = walks.into_iter().collect::<Result<_>>()?;
    let mut violations = 0u64;
    for w in &walks {
        for (d, s) in w.distances.iter().zip(&w.sine_distances) {
            if *s > 2.0 * d + 1e-12 {
                violations += 1;
            }
        }
    }
    let series = |group: &[crate::simulation::PairWalk]| -> Vec<f64> {
        (0..n as usize)
            .map(|k| {
                group.iter().map(|w| w.distances.get(k).copied().unwrap_or(0.0)).sum::<f64>()
                    / group.len() as f64
            })
            .collect()
    };
    let mean = series(&walks);
    let usable = mean.iter().take_while(|x| **x > DISTANCE_FLOOR).count();
    let mk = |point: f64, stderr: f64, status| ContractionFit {
        report: EstimateReport::new(point, stderr, m_pairs).with_meta("steps_fitted", usable),
        status,
        metric,
        mean_distances: mean.clone(),
        comparison_violations: violations,
    };
    if usable == 0 {
        return Ok(mk(0.0, 0.0, ContractionStatus::Collapse));
    }
    let fit_slope = |ys: &[f64], upto: usize| -> Option<f64> {
        let pts: Vec<(f64, f64)> = (0..upto).map(|k| ((k + 1) as f64, ys[k].ln())).collect();
        ols(&pts).map(|f| f.slope)
    };
    if usable < 2 {
        let rate = mean[0].min(1.0);
        return Ok(mk(rate, 0.0, ContractionStatus::Exponential));
    }
    let slope = fit_slope(&mean, usable).expect("two points");
    // batch slopes give the standard error
    let batches = 10usize;
    let per = walks.len() / batches;
    let mut acc = MomentAccumulator::new();
    for b in 0..batches {
        let s = series(&walks[b * per..(b + 1) * per]);
        let upto = s.iter().take(usable).take_while(|x| **x > DISTANCE_FLOOR).count();
        if let Some(sl) = fit_slope(&s, upto) {
            acc.push(sl);
        }
    }
    let slope_se = if acc.count() >= 2 { acc.stderr() } else { f64::NAN };
    let rho = slope.exp();
    let rho_se = rho * slope_se;
    let status = if slope < -1e-9 && rho + 3.0 * rho_se < 1.0 {
        ContractionStatus::Exponential
    } else {
        ContractionStatus::NoContraction
    };
    Ok(mk(rho, rho_se, status))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCurvePoint {
    pub horizon: u64,
    pub estimate: EstimateReport,
    pub unstabilized_fraction: f64,
}

/// `E(ln C)^β` at each horizon present in the samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RncMomentCurve {
    pub beta: f64,
    pub points: Vec<MomentCurvePoint>,
    /// More than half of the samples at some horizon had not stabilized.
    pub unreliable: bool,
}

impl RncMomentCurve {
    /// Relative change between the last two horizons.
    pub fn last_relative_change(&self) -> Option<f64> {
        let k = self.points.len();
        if k < 2 {
            return None;
        }
        let (a, b) = (self.points[k - 2].estimate.point, self.points[k - 1].estimate.point);
        Some((b - a).abs() / a.abs().max(f64::MIN_POSITIVE))
    }
}

pub fn rnc_moment_curve(samples: &[RncSample], beta_grid: &[f64]) -> Result<Vec<RncMomentCurve>> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no RNC samples".into()));
    }
    if beta_grid.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
        return Err(Error::InvalidArgument("moment orders must be positive".into()));
    }
    let mut by_h: BTreeMap<u64, Vec<&RncSample>> = BTreeMap::new();
    for s in samples {
        by_h.entry(s.horizon).or_default().push(s);
    }
    Ok(beta_grid
        .iter()
        .map(|&beta| {
            let points: Vec<MomentCurvePoint> = by_h
                .iter()
                .map(|(&h, group)| {
                    let finite: Vec<f64> = group
                        .iter()
                        .filter(|s| s.log_value.is_finite())
                        .map(|s| s.log_value.max(0.0).powf(beta))
                        .collect();
                    let acc = MomentAccumulator::from_slice(&finite);
                    let mut est = EstimateReport::from_moments(&acc).with_meta("horizon", h);
                    est.censored_fraction = 1.0 - finite.len() as f64 / group.len() as f64;
                    let unstab = group.iter().filter(|s| !s.stabilized).count() as f64 / group.len() as f64;
                    MomentCurvePoint {
                        horizon: h,
                        estimate: est,
                        unstabilized_fraction: unstab,
                    }
                })
                .collect();
            let unreliable = points.iter().any(|p| p.unstabilized_fraction > 0.5);
            RncMomentCurve {
                beta,
                points,
                unreliable,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecurrenceThresholds {
    /// Late return frequency above which (at `sigmas` significance) the
    /// sample is recurrent-like.
    pub recurrent_frequency: f64,
    /// Late return frequency below which a growing sample is transient-like.
    pub transient_frequency: f64,
    pub sigmas: f64,
    pub min_trajectories: usize,
    pub min_horizon: u64,
}

impl Default for RecurrenceThresholds {
    fn default() -> Self {
        RecurrenceThresholds {
            recurrent_frequency: 0.01,
            transient_frequency: 1e-3,
            sigmas: 3.0,
            min_trajectories: 100,
            min_horizon: 100_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecurrenceClass {
    RecurrentLike,
    TransientLike,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceEvidence {
    pub n_trajectories: usize,
    pub horizon: u64,
    pub late_return_frequency: f64,
    pub late_return_stderr: f64,
    pub median_slope: f64,
    pub median_slope_stderr: f64,
    /// Fraction of trajectories whose last-window minimum stays outside the ball.
    pub fraction_last_window_outside: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceVerdict {
    pub class: RecurrenceClass,
    pub evidence: RecurrenceEvidence,
}

/// Classifies a batch of trajectories started at the origin.
pub fn classify_recurrence(
    stats: &[TrajectoryStats],
    radius: f64,
    thresholds: &RecurrenceThresholds,
) -> Result<RecurrenceVerdict> {
    if stats.len() < thresholds.min_trajectories {
        return Err(Error::InsufficientData(format!(
            "{} trajectories, need {}",
            stats.len(),
            thresholds.min_trajectories
        )));
    }
    let horizon = stats[0].n_steps;
    if horizon < thresholds.min_horizon {
        return Err(Error::InsufficientData(format!(
            "horizon {horizon} below {}",
            thresholds.min_horizon
        )));
    }
    if stats
        .iter()
        .any(|s| s.n_steps != horizon || s.stride != stats[0].stride || s.late_start != stats[0].late_start)
    {
        return Err(Error::InvalidArgument("trajectories must share horizon and sampling".into()));
    }
    let late_steps = stats[0].late_steps().max(1) as f64;
    let freqs: Vec<f64> = stats.iter().map(|s| s.late_return_count as f64 / late_steps).collect();
    let facc = MomentAccumulator::from_slice(&freqs);
    let k = stats[0].log_norm_samples.len();
    let mut pts = Vec::with_capacity(k);
    for j in 0..k {
        let n = ((j as u64 + 1) * stats[0].stride) as f64;
        if n <= stats[0].late_start as f64 {
            continue;
        }
        let mut col: Vec<f64> = stats.iter().map(|s| s.log_norm_samples[j]).collect();
        col.sort_by(f64::total_cmp);
        pts.push((n, median_sorted(&col)));
    }
    let fit = ols(&pts).ok_or_else(|| Error::InsufficientData("too few samples in the late window".into()))?;
    let ln_radius = radius.ln_1p();
    let outside = stats.iter().filter(|s| s.last_window_min() > ln_radius).count() as f64 / stats.len() as f64;
    let evidence = RecurrenceEvidence {
        n_trajectories: stats.len(),
        horizon,
        late_return_frequency: facc.mean(),
        late_return_stderr: facc.stderr(),
        median_slope: fit.slope,
        median_slope_stderr: fit.slope_stderr,
        fraction_last_window_outside: outside,
    };
    let z = thresholds.sigmas;
    let class = if evidence.late_return_frequency - z * evidence.late_return_stderr > thresholds.recurrent_frequency {
        RecurrenceClass::RecurrentLike
    } else if evidence.median_slope - z * evidence.median_slope_stderr > 0.0
        && evidence.late_return_frequency < thresholds.transient_frequency
    {
        RecurrenceClass::TransientLike
    } else {
        RecurrenceClass::Inconclusive
    };
    Ok(RecurrenceVerdict { class, evidence })
}

fn median_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Riemann zeta for `s > 1` by Euler–Maclaurin summation.
pub fn riemann_zeta(s: f64) -> f64 {
    assert!(s > 1.0, "zeta needs s > 1");
    const N: usize = 32;
    const B2J: [f64; 7] = [
        1.0 / 6.0,
        -1.0 / 30.0,
        1.0 / 42.0,
        -1.0 / 30.0,
        5.0 / 66.0,
        -691.0 / 2730.0,
        7.0 / 6.0,
    ];
    let nf = N as f64;
    let mut sum: f64 = (1..N).map(|k| (k as f64).powf(-s)).sum();
    sum += nf.powf(1.0 - s) / (s - 1.0) + 0.5 * nf.powf(-s);
    let mut rising = s; // s(s+1)…(s+2j-2)
    let mut fact = 2.0; // (2j)!
    let mut npow = nf.powf(-s - 1.0);
    for (j, b) in B2J.iter().enumerate() {
        sum += b / fact * rising * npow;
        let j2 = 2.0 * (j as f64 + 1.0);
        rising *= (s + j2 - 1.0) * (s + j2);
        fact *= (j2 + 1.0) * (j2 + 2.0);
        npow /= nf * nf;
    }
    sum
}

/// A sequence `(Y_i)` whose running maximum can be sampled directly.
pub trait MaxSequence: Sync {
    /// One draw of `max_{1≤i≤τ} Y_i`.
    fn sample_max(&self, rng: &mut Stream, tau: u64) -> f64;
    /// One draw of `Y_i`.
    fn sample_at(&self, rng: &mut Stream, i: u64) -> f64;
}

/// Constant sequence.
pub struct ConstantSequence(pub f64);

impl MaxSequence for ConstantSequence {
    fn sample_max(&self, _rng: &mut Stream, _tau: u64) -> f64 {
        self.0
    }
    fn sample_at(&self, _rng: &mut Stream, _i: u64) -> f64 {
        self.0
    }
}

/// I.i.d. exponential variables with the given mean.
pub struct ExponentialSequence(pub f64);

fn max_of_exponentials(rng: &mut Stream, count: u64, mean: f64) -> f64 {
    // P(max ≤ x) = (1 - e^{-x/mean})^count
    let u: f64 = 1.0 - rng.random::<f64>();
    let p = (u.ln() / count as f64).exp();
    -mean * (-p).ln_1p()
}

impl MaxSequence for ExponentialSequence {
    fn sample_max(&self, rng: &mut Stream, tau: u64) -> f64 {
        max_of_exponentials(rng, tau, self.0)
    }
    fn sample_at(&self, rng: &mut Stream, _i: u64) -> f64 {
        max_of_exponentials(rng, 1, self.0)
    }
}

/// Stationary dependent sequence `Y_i = max(E_i, E_{i+1})` of unit exponentials.
pub struct MovingMaxSequence;

impl MaxSequence for MovingMaxSequence {
    fn sample_max(&self, rng: &mut Stream, tau: u64) -> f64 {
        max_of_exponentials(rng, tau + 1, 1.0)
    }
    fn sample_at(&self, rng: &mut Stream, _i: u64) -> f64 {
        max_of_exponentials(rng, 2, 1.0)
    }
}

/// Law of the random index `τ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TauLaw {
    Constant { value: u64 },
    /// `P(τ > t) = t^{-index}` for `t ≥ 1`.
    Pareto { index: f64 },
    /// Geometric on `{1, 2, …}` with success probability `p`.
    Geometric { p: f64 },
}

impl TauLaw {
    pub fn sample(&self, rng: &mut Stream) -> u64 {
        match *self {
            TauLaw::Constant { value } => value,
            TauLaw::Pareto { index } => {
                let u: f64 = 1.0 - rng.random::<f64>();
                let t = u.powf(-1.0 / index).ceil();
                if t >= 1.8e19 {
                    u64::MAX / 2
                } else {
                    t as u64
                }
            }
            TauLaw::Geometric { p } => {
                let u: f64 = 1.0 - rng.random::<f64>();
                (u.ln() / (-p).ln_1p()).floor() as u64 + 1
            }
        }
    }
}

/// Outcome of a Monte Carlo check of
/// `E max_{i≤τ} Y_i ≤ C·(E τ^α)^{(β-1)/β}·sup_i (E Y_i^β)^{1/β}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxMomentCheck {
    pub alpha: f64,
    pub beta: f64,
    pub constant: f64,
    pub lhs: EstimateReport,
    pub rhs: EstimateReport,
    pub passed: bool,
}

/// Indices at which `E Y_i^β` is probed for the supremum.
const PROBE_INDICES: [u64; 5] = [1, 2, 4, 8, 16];

pub fn max_moment_bound_check(
    sequence: &dyn MaxSequence,
    tau: TauLaw,
    alpha: f64,
    beta: f64,
    trials: u64,
    streams: &Streams,
) -> Result<MaxMomentCheck> {
    if !(alpha > 0.0) {
        return Err(Error::Hypothesis("alpha must be positive".into()));
    }
    if !(beta > (1.0 + alpha) / alpha) || alpha * (beta - 1.0) <= 1.0 {
        return Err(Error::Hypothesis(format!(
            "need beta > (1 + alpha)/alpha, got alpha = {alpha}, beta = {beta}"
        )));
    }
    if trials < 2 {
        return Err(Error::InvalidArgument("need at least two trials".into()));
    }
    let constant = riemann_zeta(alpha * (beta - 1.0));
    let draws = streams.map("max-moment", trials, |_, rng| {
        let t = tau.sample(rng);
        let m = sequence.sample_max(rng, t);
        let probes: Vec<f64> = PROBE_INDICES
            .iter()
            .map(|&i| sequence.sample_at(rng, i).max(0.0).powf(beta))
            .collect();
        (m, (t as f64).powf(alpha), probes)
    });
    let lhs = MomentAccumulator::from_slice(&draws.iter().map(|d| d.0).collect::<Vec<_>>());
    let tau_acc = MomentAccumulator::from_slice(&draws.iter().map(|d| d.1).collect::<Vec<_>>());
    let (sup_acc, _) = PROBE_INDICES
        .iter()
        .enumerate()
        .map(|(k, _)| MomentAccumulator::from_slice(&draws.iter().map(|d| d.2[k]).collect::<Vec<_>>()))
        .map(|a| (a, a.mean()))
        .fold((MomentAccumulator::new(), f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        });
    let e_tau = tau_acc.mean();
    let e_y = sup_acc.mean();
    let a_exp = (beta - 1.0) / beta;
    let b_exp = 1.0 / beta;
    let rhs = constant * e_tau.powf(a_exp) * e_y.powf(b_exp);
    // delta method on the product of powers
    let rel_tau = if e_tau > 0.0 { a_exp * tau_acc.stderr() / e_tau } else { 0.0 };
    let rel_y = if e_y > 0.0 { b_exp * sup_acc.stderr() / e_y } else { 0.0 };
    let rhs_se = rhs * (rel_tau * rel_tau + rel_y * rel_y).sqrt();
    let lhs_rep = EstimateReport::from_moments(&lhs);
    let rhs_rep = EstimateReport::new(rhs, rhs_se, trials);
    let slack = 3.0 * (lhs_rep.stderr.powi(2) + rhs_se.powi(2)).sqrt();
    let passed = lhs_rep.point <= rhs + nan_to_zero(slack);
    Ok(MaxMomentCheck {
        alpha,
        beta,
        constant,
        lhs: lhs_rep,
        rhs: rhs_rep,
        passed,
    })
}

fn nan_to_zero(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x
    }
}
