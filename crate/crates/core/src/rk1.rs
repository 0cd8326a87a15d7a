//! The signed-ray chain of a rank-one model and its fluctuation
//! identities: two-step stationarity, the weight `N` with `PⁿN ≤ 3N`,
//! the closed-form walk variance and lag-2 independence.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{correlation, ks_statistic, EstimateReport, MomentAccumulator};
use crate::linalg::Matrix;
use crate::models::{Family, ModelSpec, Sampler};
use crate::projective::{act, ProjectivePoint};
use crate::stream::{Stream, Streams};

/// `Z = ±e^{log_norm}·direction`, the state of the chain
/// `Z_n = ±A_n Z_{n-1}/|Z_{n-1}|`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedRay {
    pub log_norm: f64,
    pub direction: ProjectivePoint,
}

impl SignedRay {
    pub fn new(log_norm: f64, direction: ProjectivePoint) -> Self {
        SignedRay { log_norm, direction }
    }

    /// `f(z) = ln|z|`
    pub fn f(&self) -> f64 {
        self.log_norm
    }
}

fn require_rank_one(spec: &ModelSpec) -> Result<Sampler> {
    if !matches!(spec.family, Family::RankOne { .. }) {
        return Err(Error::InvalidModel(format!(
            "{} is not a rank-one model",
            spec.family_name()
        )));
    }
    spec.sampler()
}

/// One step of the chain driven by a given matrix.
pub fn step_with(a: &Matrix, z: &SignedRay) -> SignedRay {
    let (direction, gain) = act(a, &z.direction);
    SignedRay {
        log_norm: gain,
        direction,
    }
}

pub fn step_z<R: Rng + ?Sized>(spec: &ModelSpec, z: &SignedRay, rng: &mut R) -> Result<SignedRay> {
    let sampler = require_rank_one(spec)?;
    let (a, _b) = sampler.sample_pair(rng);
    Ok(step_with(&a, z))
}

/// `f(Z_n)` after `n` steps from `z`, consuming one `(A, B)` pair per step.
fn f_after(sampler: &Sampler, z: &SignedRay, n: usize, rng: &mut Stream) -> f64 {
    let mut cur = z.clone();
    for _ in 0..n {
        let (a, _b) = sampler.sample_pair(rng);
        cur = step_with(&a, &cur);
    }
    cur.f()
}

/// A draw of `f(Z_0)` with `Z_0` from the stationary law `μ̄∗ν`.
fn stationary_f(sampler: &Sampler, rng: &mut Stream) -> f64 {
    let v = sampler.invariant_direction(rng, 0);
    let (a, _b) = sampler.sample_pair(rng);
    act(&a, &v).1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub steps: usize,
    pub n_samples: u64,
    /// KS statistic for every pair among the starts and the stationary draw.
    pub pairwise_ks: Vec<f64>,
    pub max_ks: f64,
    pub threshold: f64,
}

impl StationarityReport {
    pub fn passed(&self) -> bool {
        self.max_ks < self.threshold
    }
}

/// Compares the law of `f(Z_steps)` across starting points and against
/// the stationary law.
pub fn two_step_stationarity_check(
    spec: &ModelSpec,
    starts: &[SignedRay],
    n_samples: u64,
    steps: usize,
    streams: &Streams,
) -> Result<StationarityReport> {
    let sampler = require_rank_one(spec)?;
    if starts.is_empty() || n_samples < 2 {
        return Err(Error::InvalidArgument("need starts and at least two samples".into()));
    }
    let mut groups: Vec<Vec<f64>> = starts
        .iter()
        .enumerate()
        .map(|(k, z)| {
            streams.map(&format!("stationarity-{k}"), n_samples, |_, rng| {
                f_after(&sampler, z, steps, rng)
            })
        })
        .collect();
    groups.push(streams.map("stationarity-reference", n_samples, |_, rng| stationary_f(&sampler, rng)));
    let mut pairwise = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            pairwise.push(ks_statistic(&groups[i], &groups[j]));
        }
    }
    let max_ks = pairwise.iter().copied().fold(0.0, f64::max);
    Ok(StationarityReport {
        steps,
        n_samples,
        threshold: ks_threshold(n_samples, pairwise.len()),
        pairwise_ks: pairwise,
        max_ks,
    })
}

/// Two-sample KS critical value at family-wise level 5% over
/// `comparisons` tests on equal samples of size `n` (Bonferroni).
pub fn ks_threshold(n: u64, comparisons: usize) -> f64 {
    let level = 0.05 / comparisons.max(1) as f64;
    (-0.5 * (level / 2.0).ln()).sqrt() * (2.0 / n as f64).sqrt()
}

/// Monte Carlo version of
/// `N(z) = max(|f(z)|^δ, (P|f|^{δp}(z))^{1/p}, (μ̄∗ν(|f|^{δp}))^{1/p})`.
///
/// The one-step expectation is taken over a fixed sample of matrices, so
/// `N` is a deterministic function once built.
#[derive(Clone, Debug)]
pub struct WeightN {
    pub delta: f64,
    pub p: f64,
    inner: Vec<Matrix>,
    stationary_term: f64,
}

impl WeightN {
    pub fn estimate(spec: &ModelSpec, delta: f64, p: f64, n_inner: usize, rng: &mut Stream) -> Result<Self> {
        let sampler = require_rank_one(spec)?;
        if !(delta > 1.0 && p > 1.0) || n_inner == 0 {
            return Err(Error::InvalidArgument("need delta > 1, p > 1 and a nonempty sample".into()));
        }
        let inner: Vec<Matrix> = (0..n_inner).map(|_| sampler.sample_pair(rng).0).collect();
        let q = delta * p;
        let mut acc = 0.0;
        for _ in 0..n_inner {
            acc += stationary_f(&sampler, rng).abs().powf(q);
        }
        let stationary_term = (acc / n_inner as f64).powf(1.0 / p);
        Ok(WeightN {
            delta,
            p,
            inner,
            stationary_term,
        })
    }

    /// `(P|f|^{δp}(z))^{1/p}` over the fixed inner sample.
    pub fn one_step_term(&self, z: &SignedRay) -> f64 {
        let q = self.delta * self.p;
        let s: f64 = self
            .inner
            .iter()
            .map(|a| act(a, &z.direction).1.abs().powf(q))
            .sum();
        (s / self.inner.len() as f64).powf(1.0 / self.p)
    }

    pub fn stationary_term(&self) -> f64 {
        self.stationary_term
    }

    pub fn value(&self, z: &SignedRay) -> f64 {
        z.f()
            .abs()
            .powf(self.delta)
            .max(self.one_step_term(z))
            .max(self.stationary_term)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PnBound {
    pub n: usize,
    /// `PⁿN(z)`
    pub pn_n: EstimateReport,
    /// `(PⁿN^p(z))^{1/p}`
    pub pn_np_root: f64,
    pub n_at_start: f64,
}

impl PnBound {
    pub fn holds(&self) -> bool {
        self.pn_n.point <= 3.0 * self.n_at_start + 3.0 * self.pn_n.stderr
            && self.pn_np_root <= 3.0 * self.n_at_start * (1.0 + 1e-9) + 3.0 * self.pn_n.stderr
    }
}

/// Estimates `PⁿN(z)` for `n = 1..=n_max`.
pub fn pn_weight_check(
    spec: &ModelSpec,
    weight: &WeightN,
    z: &SignedRay,
    n_max: usize,
    n_outer: u64,
    streams: &Streams,
) -> Result<Vec<PnBound>> {
    let sampler = require_rank_one(spec)?;
    let n_at_start = weight.value(z);
    (1..=n_max)
        .map(|n| {
            let vals = streams.map(&format!("pn-{n}"), n_outer, |_, rng| {
                let mut cur = z.clone();
                for _ in 0..n {
                    let (a, _b) = sampler.sample_pair(rng);
                    cur = step_with(&a, &cur);
                }
                weight.value(&cur)
            });
            let acc = MomentAccumulator::from_slice(&vals);
            let pw = vals.iter().map(|v| v.powf(weight.p)).sum::<f64>() / vals.len() as f64;
            Ok(PnBound {
                n,
                pn_n: EstimateReport::from_moments(&acc),
                pn_np_root: pw.powf(1.0 / weight.p),
                n_at_start,
            })
        })
        .collect()
}

/// Consecutive increments `(Y_1, Y_2)` of the walk from a stationary start,
/// with `Y_k = ln a_k + ln|⟨w̃_k, w_{k-1}⟩|`.
fn increment_pair(sampler: &Sampler, rng: &mut Stream) -> (f64, f64) {
    let w0 = sampler.sample_rank_one(rng).expect("rank one").w;
    let t1 = sampler.sample_rank_one(rng).expect("rank one");
    let t2 = sampler.sample_rank_one(rng).expect("rank one");
    let y1 = t1.a.ln() + t1.w_tilde.dot(&w0).abs().ln();
    let y2 = t2.a.ln() + t2.w_tilde.dot(&t1.w).abs().ln();
    (y1, y2)
}

/// `σ² = V(Y_2) + 2·cov(Y_2, Y_1)` by Monte Carlo over i.i.d. increment pairs.
pub fn rk1_sigma2_closed_form(spec: &ModelSpec, n_samples: u64, streams: &Streams) -> Result<EstimateReport> {
    let sampler = require_rank_one(spec)?;
    if n_samples < 10 {
        return Err(Error::InvalidArgument("need at least ten samples".into()));
    }
    let pairs = streams.map("rk1-sigma2", n_samples, |_, rng| increment_pair(&sampler, rng));
    let n = pairs.len() as f64;
    let m1 = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let m2 = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let g: Vec<f64> = pairs
        .iter()
        .map(|(y1, y2)| (y2 - m2) * (y2 - m2) + 2.0 * (y2 - m2) * (y1 - m1))
        .collect();
    let acc = MomentAccumulator::from_slice(&g);
    let point = acc.mean() * n / (n - 1.0);
    let mut rep = EstimateReport::new(point, acc.stderr(), n_samples);
    if point.abs() <= 1e-12 {
        rep = rep.with_meta("degenerate", true);
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagCorrelation {
    pub lag: usize,
    pub correlation: f64,
    pub stderr: f64,
}

/// Correlation of `Y_k` and `Y_{k+lag}` along stationary walks.
pub fn increment_correlation(
    spec: &ModelSpec,
    lag: usize,
    n_samples: u64,
    streams: &Streams,
) -> Result<LagCorrelation> {
    let sampler = require_rank_one(spec)?;
    if lag == 0 {
        return Err(Error::InvalidArgument("lag must be positive".into()));
    }
    let pairs = streams.map(&format!("rk1-lag-{lag}"), n_samples, |_, rng| {
        let v = sampler.invariant_direction(rng, 0);
        let mut z = SignedRay::new(0.0, v);
        let mut first = 0.0;
        for k in 1..=lag + 1 {
            let (a, _b) = sampler.sample_pair(rng);
            z = step_with(&a, &z);
            if k == 1 {
                first = z.f();
            }
        }
        (first, z.f())
    });
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(LagCorrelation {
        lag,
        correlation: correlation(&xs, &ys),
        stderr: 1.0 / (n_samples as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;
    use crate::models::{reference, DirectionLaw};
    use crate::projective::canonicalize;
    use crate::simulation::run_projective_walk;
    use crate::stream::derive_stream;

    #[test]
    fn partial_sums_reproduce_the_walk() {
        let spec = reference::rank_one_uniform(3, 0.4);
        let v0 = canonicalize(&Vector::from_slice(&[1.0, 2.0, -0.5]));
        let walk = run_projective_walk(&spec, &v0, 200, &mut derive_stream(1, "w", 0)).unwrap();
        let mut rng = derive_stream(1, "w", 0);
        let mut z = SignedRay::new(0.0, v0);
        let mut s = 0.0;
        for k in 0..200 {
            z = step_z(&spec, &z, &mut rng).unwrap();
            s += z.f();
            assert_eq!(s, walk.s_series[k]);
        }
    }

    #[test]
    fn rejects_other_families() {
        let spec = reference::similarity(2, 0.5);
        let z = SignedRay::new(0.0, canonicalize(&Vector::basis(2, 0)));
        assert!(step_z(&spec, &z, &mut derive_stream(1, "w", 1)).is_err());
    }

    #[test]
    fn fixed_alignment_gives_constant_increments() {
        let c: f64 = 0.6;
        let spec = ModelSpec::new(
            Family::RankOne {
                mean_log_a: 0.0,
                sigma_log_a: 0.0,
                directions: DirectionLaw::Fixed {
                    w_tilde: vec![c, (1.0 - c * c).sqrt()],
                    w: vec![1.0, 0.0],
                },
            },
            2,
        );
        let mut rng = derive_stream(1, "w", 2);
        let mut z = SignedRay::new(0.0, canonicalize(&Vector::basis(2, 0)));
        for _ in 0..10 {
            z = step_z(&spec, &z, &mut rng).unwrap();
            assert!((z.f() - c.ln()).abs() < 1e-14);
        }
        let s2 = rk1_sigma2_closed_form(&spec, 100, &Streams::new(1)).unwrap();
        assert!(s2.point.abs() < 1e-20);
        assert_eq!(s2.metadata.get("degenerate").map(String::as_str), Some("true"));
    }
}
