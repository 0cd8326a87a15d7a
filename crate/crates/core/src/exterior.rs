//! Exterior powers: compound matrices, the Lyapunov spectrum and the
//! proximal dimension it implies, and the norm-comparison coefficient and
//! ladder time of the lifted walk.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimateReport, MomentAccumulator};
use crate::linalg::{operator_norm, qr_decompose, singular_values, Matrix, Vector};
use crate::models::{uniform_unit_vector, ModelSpec, Sampler};
use crate::projective::{canonicalize, ensure_unit, ProjectivePoint};
use crate::simulation::{DirectionChain, LadderSample, LadderValue, RncSample, RncTracker};
use crate::stream::Streams;

/// Steps between re-orthogonalizations in the spectrum estimate.
const REORTHO_EVERY: u64 = 20;
/// Gaps closer than this (plus three standard errors) count as ties.
const GAP_FLOOR: f64 = 0.01;
/// Above this resolution the proximal dimension is reported as undetermined.
const MAX_RESOLUTION: f64 = 0.05;

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// All `r`-subsets of `0..d` in lexicographic order.
pub fn subsets(d: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(binomial(d, r));
    let mut cur: Vec<usize> = (0..r).collect();
    if r > d {
        return out;
    }
    loop {
        out.push(cur.clone());
        let mut i = r;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < d - r + i {
                break;
            }
        }
        cur[i] += 1;
        for j in i + 1..r {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Compound matrix `∧^r A` in the lexicographic basis `e_I = e_{i_1} ∧ … ∧ e_{i_r}`.
pub fn compound(a: &Matrix, r: usize) -> Result<Matrix> {
    let d = a.dim();
    if r == 0 || r > d {
        return Err(Error::InvalidArgument(format!("exterior degree {r} outside 1..={d}")));
    }
    if r == 1 {
        return Ok(a.clone());
    }
    if r == d {
        return Ok(Matrix::diag(&[a.determinant()]));
    }
    let idx = subsets(d, r);
    let k = idx.len();
    let mut out = Matrix::zeros(k);
    let mut sub = Matrix::zeros(r);
    for (p, rows) in idx.iter().enumerate() {
        for (q, cols) in idx.iter().enumerate() {
            for (i, &ri) in rows.iter().enumerate() {
                for (j, &cj) in cols.iter().enumerate() {
                    sub[(i, j)] = a[(ri, cj)];
                }
            }
            out[(p, q)] = sub.determinant();
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WedgeNormCheck {
    pub compound_norm: f64,
    pub singular_product: f64,
    pub relative_error: f64,
}

/// Compares `‖∧^r A‖` with `s_1⋯s_r`.
pub fn wedge_norm_check(a: &Matrix, r: usize) -> Result<WedgeNormCheck> {
    let c = compound(a, r)?;
    let lhs = operator_norm(&c);
    let rhs: f64 = singular_values(a).iter().take(r).product();
    let scale = lhs.abs().max(rhs.abs());
    let relative_error = if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
    Ok(WedgeNormCheck {
        compound_norm: lhs,
        singular_product: rhs,
        relative_error,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProximalDimension {
    /// `λ̂_1 ≥ … ≥ λ̂_d`
    pub exponents: Vec<EstimateReport>,
    /// `λ̂_1 - λ̂_k` for `k = 2..=d`.
    pub gaps: Vec<EstimateReport>,
    /// Tie tolerance per gap: three standard errors plus a floor.
    pub gap_tolerances: Vec<f64>,
    pub r_hat: Option<usize>,
    /// Top exponent of `∧^r` minus `λ̂_1 + … + λ̂_r` (`r = 1..=d`), with the
    /// two means' standard errors combined.
    pub lift_additivity: Vec<EstimateReport>,
}

struct SpectrumRun {
    exponents: Vec<f64>,
    lifted_top: Vec<f64>,
}

fn spectrum_run<R: Rng + ?Sized>(sampler: &Sampler, n: u64, with_lift: bool, rng: &mut R) -> Result<SpectrumRun> {
    let d = sampler.dim();
    let mut chains: Vec<DirectionChain> = if with_lift {
        (1..=d)
            .map(|r| DirectionChain::new(&canonicalize(&uniform_unit_vector(binomial(d, r), rng))))
            .collect()
    } else {
        Vec::new()
    };
    let mut basis = Matrix::identity(d);
    let mut logs = vec![0.0; d];
    for k in 1..=n {
        let (a, _b) = sampler.sample_pair(rng);
        basis = a.mul(&basis);
        for (r, chain) in chains.iter_mut().enumerate() {
            let lifted = compound(&a, r + 1)?;
            chain.step(&lifted);
        }
        if k % REORTHO_EVERY == 0 || k == n {
            let (q, rr) = qr_decompose(&basis);
            for i in 0..d {
                logs[i] += rr[(i, i)].ln();
            }
            basis = q;
        }
    }
    let mut exponents: Vec<f64> = logs.iter().map(|l| l / n as f64).collect();
    if exponents.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("singular product in the spectrum estimate".into()));
    }
    exponents.sort_by(|a, b| b.total_cmp(a));
    let lifted_top = chains.iter().map(|c| c.log_gain() / n as f64).collect();
    Ok(SpectrumRun { exponents, lifted_top })
}

/// Lyapunov spectrum by periodically re-orthogonalized products, and the
/// number of exponents tied with the top one.
pub fn estimate_proximal_dimension(
    spec: &ModelSpec,
    n: u64,
    m: u64,
    with_lift: bool,
    streams: &Streams,
) -> Result<ProximalDimension> {
    if !spec.is_invertible() {
        return Err(Error::InvalidModel(format!(
            "{} is not invertible; the spectrum estimate needs invertible factors",
            spec.family_name()
        )));
    }
    if n == 0 || m < 2 {
        return Err(Error::InvalidArgument("need n ≥ 1 and at least two replicas".into()));
    }
    let sampler = spec.sampler()?;
    let d = spec.dim;
    let runs: Vec<SpectrumRun> = streams
        .map("spectrum", m, |_, rng| spectrum_run(&sampler, n, with_lift, rng))
        .into_iter()
        .collect::<Result<_>>()?;
    let exponents: Vec<EstimateReport> = (0..d)
        .map(|i| EstimateReport::from_moments(&MomentAccumulator::from_slice(&runs.iter().map(|r| r.exponents[i]).collect::<Vec<_>>())))
        .collect();
    let gaps: Vec<EstimateReport> = (1..d)
        .map(|k| {
            let g: Vec<f64> = runs.iter().map(|r| r.exponents[0] - r.exponents[k]).collect();
            EstimateReport::from_moments(&MomentAccumulator::from_slice(&g))
        })
        .collect();
    let gap_tolerances: Vec<f64> = gaps.iter().map(|g| 3.0 * g.stderr + GAP_FLOOR).collect();
    let resolution = gaps.iter().map(|g| 3.0 * g.stderr).fold(0.0, f64::max);
    let r_hat = if resolution > MAX_RESOLUTION {
        None
    } else {
        let tied = gaps
            .iter()
            .zip(&gap_tolerances)
            .take_while(|(g, tol)| g.point < **tol)
            .count();
        Some(tied + 1)
    };
    let lift_additivity = if with_lift {
        (1..=d)
            .map(|r| {
                let lifted = MomentAccumulator::from_slice(&runs.iter().map(|run| run.lifted_top[r - 1]).collect::<Vec<_>>());
                let summed = MomentAccumulator::from_slice(
                    &runs.iter().map(|run| run.exponents[..r].iter().sum::<f64>()).collect::<Vec<_>>(),
                );
                // unpaired: the per-replica difference only sees the O(1/n) start term
                let se = (lifted.stderr().powi(2) + summed.stderr().powi(2)).sqrt();
                EstimateReport::new(lifted.mean() - summed.mean(), se, m).with_meta("degree", r)
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(ProximalDimension {
        exponents,
        gaps,
        gap_tolerances,
        r_hat,
        lift_additivity,
    })
}

fn check_lift_start(spec: &ModelSpec, w0: &ProjectivePoint, r: usize) -> Result<()> {
    if r == 0 || r > spec.dim {
        return Err(Error::InvalidArgument(format!("exterior degree {r} outside 1..={}", spec.dim)));
    }
    if let Some(v) = w0.representative() {
        let k = binomial(spec.dim, r);
        if v.dim() != k {
            return Err(Error::DimensionMismatch { expected: k, got: v.dim() });
        }
        ensure_unit(v)?;
    }
    Ok(())
}

/// `sup_{n ≤ horizon} (ln‖A_{n,1}‖ - (1/r)·ln|∧^r A_{n,1} w̄|)`.
pub fn lifted_rnc_coefficient<R: Rng + ?Sized>(
    spec: &ModelSpec,
    w0: &ProjectivePoint,
    r: usize,
    horizon: u64,
    rng: &mut R,
) -> Result<RncSample> {
    check_lift_start(spec, w0, r)?;
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let sampler = spec.sampler()?;
    let mut tracker = RncTracker::new(spec.dim, w0, 1.0 / r as f64);
    for _ in 0..horizon {
        let (a, _b) = sampler.sample_pair(rng);
        if !tracker.is_infinite() {
            let lifted = compound(&a, r)?;
            tracker.step(&a, &lifted);
        } else {
            tracker.skip();
        }
    }
    Ok(tracker.sample())
}

/// The per-step ratios `ln‖A_{n,1}‖ - (1/r)·ln|∧^r A_{n,1} w̄|` for `n = 1..=n_steps`.
pub fn lifted_rnc_path<R: Rng + ?Sized>(
    spec: &ModelSpec,
    w0: &ProjectivePoint,
    r: usize,
    n_steps: u64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_lift_start(spec, w0, r)?;
    let sampler = spec.sampler()?;
    let mut tracker = RncTracker::new(spec.dim, w0, 1.0 / r as f64);
    let mut out = Vec::with_capacity(n_steps as usize);
    for _ in 0..n_steps {
        let (a, _b) = sampler.sample_pair(rng);
        let lifted = compound(&a, r)?;
        out.push(tracker.step(&a, &lifted));
    }
    Ok(out)
}

/// First `n` with `ln|∧^r A_{n,1} w̄| ≤ ln ρ`.
pub fn lifted_ladder_time<R: Rng + ?Sized>(
    spec: &ModelSpec,
    w0: &ProjectivePoint,
    r: usize,
    rho: f64,
    cap: u64,
    rng: &mut R,
) -> Result<LadderSample> {
    check_lift_start(spec, w0, r)?;
    if !(rho > 0.0 && rho < 1.0) || cap == 0 {
        return Err(Error::InvalidArgument("need rho in (0, 1) and a positive cap".into()));
    }
    let sampler = spec.sampler()?;
    let mut chain = DirectionChain::new(w0);
    let threshold = rho.ln();
    for n in 1..=cap {
        let (a, _b) = sampler.sample_pair(rng);
        chain.step(&compound(&a, r)?);
        if chain.log_gain() <= threshold {
            return Ok(LadderSample { value: LadderValue::Hit(n), rho, cap });
        }
    }
    Ok(LadderSample { value: LadderValue::Censored(cap), rho, cap })
}

/// Unit vector `e_{i_1} ∧ … ∧ e_{i_r}` for the given index set.
pub fn wedge_basis_vector(d: usize, indices: &[usize]) -> Result<Vector> {
    let idx = subsets(d, indices.len());
    let pos = idx
        .iter()
        .position(|s| s.as_slice() == indices)
        .ok_or_else(|| Error::InvalidArgument("indices must be strictly increasing and below d".into()))?;
    Ok(Vector::basis(idx.len(), pos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::reference;
    use crate::stream::derive_stream;

    #[test]
    fn subsets_are_lexicographic() {
        assert_eq!(
            subsets(4, 2),
            vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
        assert_eq!(subsets(3, 3), vec![vec![0, 1, 2]]);
        assert_eq!(binomial(8, 4), 70);
    }

    #[test]
    fn compound_of_identity_and_top_degree() {
        let c = compound(&Matrix::identity(4), 2).unwrap();
        assert_eq!(c, Matrix::identity(6));
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 0.0], vec![0.5, 1.0, 3.0], vec![2.0, 0.0, 1.0]]).unwrap();
        let top = compound(&a, 3).unwrap();
        assert!((top[(0, 0)] - a.determinant()).abs() < 1e-14);
        assert_eq!(compound(&a, 1).unwrap(), a);
        assert!(compound(&a, 4).is_err());
    }

    #[test]
    fn proximal_dimension_rejects_rank_one() {
        let spec = reference::rank_one_uniform(2, 0.3);
        assert!(estimate_proximal_dimension(&spec, 100, 4, false, &Streams::new(1)).is_err());
    }

    #[test]
    fn lifted_rnc_degree_one_matches_plain() {
        let spec = reference::invertible_proximal(0.4, 1.0, 0.02);
        let w = canonicalize(&Vector::from_slice(&[0.3, 0.9]));
        let a = lifted_rnc_coefficient(&spec, &w, 1, 500, &mut derive_stream(2, "l", 0)).unwrap();
        let b = crate::simulation::rnc_coefficient(&spec, &w, 500, &mut derive_stream(2, "l", 0)).unwrap();
        assert_eq!(a, b);
    }
}
