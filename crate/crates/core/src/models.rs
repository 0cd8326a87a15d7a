//! Model families: laws of the pair `(A, B)` together with centring and
//! the auxiliary samplers (stationary direction, contractive fixed point).

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::linalg::{qr_decompose, LogScaledMatrix, Matrix, Vector, MAX_DIM};
use crate::projective::{act_on_unit, canonicalize, ProjectivePoint};
use crate::stream::Streams;

/// Law of the direction pair `(w̃, w)` of a rank-one factor `a·w·w̃ᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DirectionLaw {
    /// Independent, uniform on the sphere.
    #[default]
    Uniform,
    /// Independent, each the normalization of `e₁ + spread·g` for Gaussian `g`.
    Concentrated { spread: f64 },
    /// Deterministic vectors (normalized on use).
    Fixed { w_tilde: Vec<f64>, w: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    /// `a·R` with `ln a` Gaussian and `R` Haar on the orthogonal group.
    Similarity { mean_log_a: f64, sigma_log_a: f64 },
    /// `a·w·w̃ᵀ` with `ln a` Gaussian.
    RankOne {
        mean_log_a: f64,
        sigma_log_a: f64,
        #[serde(default)]
        directions: DirectionLaw,
    },
    /// Finite mixture of invertible matrices, optionally followed by a small
    /// random rotation in a random coordinate plane.
    InvertibleProximal {
        matrices: Vec<Vec<Vec<f64>>>,
        weights: Vec<f64>,
        #[serde(default)]
        jitter: f64,
    },
    /// Entries i.i.d. `exp(N(mean, sigma²))`.
    Nonnegative {
        mean_log_entry: f64,
        sigma_log_entry: f64,
    },
    /// `diag(α, 1/α)` with `ln α ~ N(0, s²)`.
    DiagonalCounterexample { s: f64 },
    /// Uniform on `{[[0, λ], [1/λ, 0]], [[0, 1], [1, 0]]}`.
    PermutationCounterexample { lambda: f64 },
    /// A fixed matrix.
    Deterministic { matrix: Vec<Vec<f64>> },
}

/// Law of the translation `B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BLaw {
    /// `mean + sigma·g` with `g` standard Gaussian.
    Gaussian {
        sigma: f64,
        #[serde(default)]
        mean: Option<Vec<f64>>,
    },
    /// `sigma·exp(P)·u` with `P` Pareto(1, index) and `u` uniform on the sphere;
    /// `ln⁺|B|` then has moments only below `pareto_index`.
    HeavyLogTail { sigma: f64, pareto_index: f64 },
    Fixed { vector: Vec<f64> },
}

impl Default for BLaw {
    fn default() -> Self {
        BLaw::Gaussian {
            sigma: 1.0,
            mean: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    pub dim: usize,
    /// `A` is multiplied by `exp(log_scale_shift)`.
    #[serde(default)]
    pub log_scale_shift: f64,
    #[serde(default)]
    pub b_law: BLaw,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidModel(msg.into())
}

fn check_scale(name: &str, x: f64) -> Result<()> {
    if !(x.is_finite() && x >= 0.0) {
        return Err(invalid(format!("{name} must be finite and nonnegative, got {x}")));
    }
    Ok(())
}

fn check_finite(name: &str, x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(invalid(format!("{name} must be finite, got {x}")));
    }
    Ok(())
}

fn check_vector(name: &str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(invalid(format!("{name} has length {}, expected {dim}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(format!("{name} has non-finite entries")));
    }
    Ok(())
}

impl ModelSpec {
    pub fn new(family: Family, dim: usize) -> Self {
        ModelSpec {
            family,
            dim,
            log_scale_shift: 0.0,
            b_law: BLaw::default(),
        }
    }

    pub fn with_b_law(mut self, b_law: BLaw) -> Self {
        self.b_law = b_law;
        self
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.log_scale_shift = shift;
        self
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::Similarity { .. } => "similarity",
            Family::RankOne { .. } => "rank_one",
            Family::InvertibleProximal { .. } => "invertible_proximal",
            Family::Nonnegative { .. } => "nonnegative",
            Family::DiagonalCounterexample { .. } => "diagonal_counterexample",
            Family::PermutationCounterexample { .. } => "permutation_counterexample",
            Family::Deterministic { .. } => "deterministic",
        }
    }

    /// Whether every draw of `A` is invertible almost surely.
    pub fn is_invertible(&self) -> bool {
        !matches!(self.family, Family::RankOne { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if d == 0 || d > MAX_DIM {
            return Err(invalid(format!("dimension {d} outside 1..={MAX_DIM}")));
        }
        check_finite("log_scale_shift", self.log_scale_shift)?;
        match &self.family {
            Family::Similarity {
                mean_log_a,
                sigma_log_a,
            } => {
                check_finite("mean_log_a", *mean_log_a)?;
                check_scale("sigma_log_a", *sigma_log_a)?;
            }
            Family::RankOne {
                mean_log_a,
                sigma_log_a,
                directions,
            } => {
                check_finite("mean_log_a", *mean_log_a)?;
                check_scale("sigma_log_a", *sigma_log_a)?;
                match directions {
                    DirectionLaw::Uniform => {}
                    DirectionLaw::Concentrated { spread } => check_scale("spread", *spread)?,
                    DirectionLaw::Fixed { w_tilde, w } => {
                        check_vector("w_tilde", w_tilde, d)?;
                        check_vector("w", w, d)?;
                        if w_tilde.iter().all(|x| *x == 0.0) || w.iter().all(|x| *x == 0.0) {
                            return Err(invalid("fixed rank-one directions must be nonzero"));
                        }
                    }
                }
            }
            Family::InvertibleProximal {
                matrices,
                weights,
                jitter,
            } => {
                if matrices.is_empty() || matrices.len() != weights.len() {
                    return Err(invalid("need one positive weight per matrix"));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(invalid("mixture weights must be positive"));
                }
                check_scale("jitter", *jitter)?;
                for m in matrices {
                    if m.len() != d {
                        return Err(invalid("mixture matrix has wrong dimension"));
                    }
                    let mm = Matrix::from_rows(m).map_err(|_| invalid("mixture matrix is not square"))?;
                    if !mm.is_finite() || mm.determinant() == 0.0 {
                        return Err(invalid("mixture matrices must be finite and invertible"));
                    }
                }
            }
            Family::Nonnegative {
                mean_log_entry,
                sigma_log_entry,
            } => {
                check_finite("mean_log_entry", *mean_log_entry)?;
                check_scale("sigma_log_entry", *sigma_log_entry)?;
            }
            Family::DiagonalCounterexample { s } => {
                if d != 2 {
                    return Err(invalid("the diagonal counterexample lives in dimension 2"));
                }
                check_scale("s", *s)?;
            }
            Family::PermutationCounterexample { lambda } => {
                if d != 2 {
                    return Err(invalid("the permutation counterexample lives in dimension 2"));
                }
                if !(lambda.is_finite() && *lambda > 1.0) {
                    return Err(invalid("lambda must exceed 1"));
                }
            }
            Family::Deterministic { matrix } => {
                if matrix.len() != d {
                    return Err(invalid("deterministic matrix has wrong dimension"));
                }
                let m = Matrix::from_rows(matrix).map_err(|_| invalid("deterministic matrix is not square"))?;
                if !m.is_finite() {
                    return Err(invalid("deterministic matrix must be finite"));
                }
            }
        }
        match &self.b_law {
            BLaw::Gaussian { sigma, mean } => {
                check_scale("b sigma", *sigma)?;
                if let Some(m) = mean {
                    check_vector("b mean", m, d)?;
                }
            }
            BLaw::HeavyLogTail {
                sigma,
                pareto_index,
            } => {
                check_scale("b sigma", *sigma)?;
                if !(pareto_index.is_finite() && *pareto_index > 0.0) {
                    return Err(invalid("pareto_index must be positive"));
                }
            }
            BLaw::Fixed { vector } => check_vector("b vector", vector, d)?,
        }
        Ok(())
    }

    pub fn sampler(&self) -> Result<Sampler> {
        Sampler::new(self)
    }
}

/// One draw of the rank-one factor: `A = a·w·w̃ᵀ` (the centring shift is
/// already folded into `a`).
#[derive(Clone, Debug, PartialEq)]
pub struct RankOneDraw {
    pub a: f64,
    pub w_tilde: Vector,
    pub w: Vector,
}

impl RankOneDraw {
    pub fn matrix(&self) -> Matrix {
        Matrix::outer(&self.w, &self.w_tilde).scale(self.a)
    }
}

#[derive(Clone, Debug)]
enum DirKind {
    Uniform,
    Concentrated(f64),
    Fixed(Vector, Vector),
}

#[derive(Clone, Debug)]
enum Kind {
    Similarity(Normal<f64>),
    RankOne(Normal<f64>, DirKind),
    Invertible {
        matrices: Vec<Matrix>,
        cumulative: Vec<f64>,
        jitter: f64,
    },
    Nonnegative(Normal<f64>),
    Diagonal(Normal<f64>),
    Permutation(Matrix, Matrix),
    Deterministic(Matrix),
}

#[derive(Clone, Debug)]
enum BKind {
    Gaussian(f64, Option<Vector>),
    HeavyLogTail(f64, f64),
    Fixed(Vector),
}

/// A validated, precomputed sampler for one model spec.
#[derive(Clone, Debug)]
pub struct Sampler {
    dim: usize,
    scale: f64,
    kind: Kind,
    b: BKind,
}

fn normal(mean: f64, sd: f64) -> Result<Normal<f64>> {
    Normal::new(mean, sd).map_err(|e| invalid(format!("bad normal law: {e}")))
}

/// Standard Gaussian vector.
pub fn gaussian_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vector {
    Vector::from_fn(dim, |_| StandardNormal.sample(rng))
}

/// Uniform point on the unit sphere.
pub fn uniform_unit_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vector {
    loop {
        let g = gaussian_vector(dim, rng);
        let n = g.norm();
        if n > 1e-300 {
            return g.scale(1.0 / n);
        }
    }
}

/// Haar-distributed orthogonal matrix.
pub fn haar_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Matrix {
    match dim {
        1 => Matrix::diag(&[if rng.random::<bool>() { 1.0 } else { -1.0 }]),
        2 => {
            let t = rng.random::<f64>() * std::f64::consts::TAU;
            let (s, c) = t.sin_cos();
            if rng.random::<bool>() {
                Matrix::from_row_major(2, &[c, -s, s, c]).expect("2x2")
            } else {
                Matrix::from_row_major(2, &[c, s, s, -c]).expect("2x2")
            }
        }
        _ => {
            let g = Matrix::from_fn(dim, |_, _| StandardNormal.sample(rng));
            let (q, r) = qr_decompose(&g);
            Matrix::from_fn(dim, |i, j| {
                let sign = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
                q[(i, j)] * sign
            })
        }
    }
}

/// Rotation by `angle` in the coordinate plane `(p, q)`.
pub fn givens(dim: usize, p: usize, q: usize, angle: f64) -> Matrix {
    let mut m = Matrix::identity(dim);
    let (s, c) = angle.sin_cos();
    m[(p, p)] = c;
    m[(q, q)] = c;
    m[(p, q)] = -s;
    m[(q, p)] = s;
    m
}

impl Sampler {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        let kind = match &spec.family {
            Family::Similarity {
                mean_log_a,
                sigma_log_a,
            } => Kind::Similarity(normal(*mean_log_a, *sigma_log_a)?),
            Family::RankOne {
                mean_log_a,
                sigma_log_a,
                directions,
            } => {
                let dirs = match directions {
                    DirectionLaw::Uniform => DirKind::Uniform,
                    DirectionLaw::Concentrated { spread } => DirKind::Concentrated(*spread),
                    DirectionLaw::Fixed { w_tilde, w } => {
                        let wt = Vector::from_slice(w_tilde);
                        let ww = Vector::from_slice(w);
                        DirKind::Fixed(wt.scale(1.0 / wt.norm()), ww.scale(1.0 / ww.norm()))
                    }
                };
                Kind::RankOne(normal(*mean_log_a, *sigma_log_a)?, dirs)
            }
            Family::InvertibleProximal {
                matrices,
                weights,
                jitter,
            } => {
                let total: f64 = weights.iter().sum();
                let mut acc = 0.0;
                let cumulative = weights
                    .iter()
                    .map(|w| {
                        acc += w / total;
                        acc
                    })
                    .collect();
                Kind::Invertible {
                    matrices: matrices
                        .iter()
                        .map(|m| Matrix::from_rows(m))
                        .collect::<Result<_>>()?,
                    cumulative,
                    jitter: *jitter,
                }
            }
            Family::Nonnegative {
                mean_log_entry,
                sigma_log_entry,
            } => Kind::Nonnegative(normal(*mean_log_entry, *sigma_log_entry)?),
            Family::DiagonalCounterexample { s } => Kind::Diagonal(normal(0.0, *s)?),
            Family::PermutationCounterexample { lambda } => Kind::Permutation(
                Matrix::from_row_major(2, &[0.0, *lambda, 1.0 / lambda, 0.0])?,
                Matrix::from_row_major(2, &[0.0, 1.0, 1.0, 0.0])?,
            ),
            Family::Deterministic { matrix } => Kind::Deterministic(Matrix::from_rows(matrix)?),
        };
        let b = match &spec.b_law {
            BLaw::Gaussian { sigma, mean } => {
                BKind::Gaussian(*sigma, mean.as_ref().map(|m| Vector::from_slice(m)))
            }
            BLaw::HeavyLogTail {
                sigma,
                pareto_index,
            } => BKind::HeavyLogTail(*sigma, *pareto_index),
            BLaw::Fixed { vector } => BKind::Fixed(Vector::from_slice(vector)),
        };
        Ok(Sampler {
            dim: d,
            scale: spec.log_scale_shift.exp(),
            kind,
            b,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn direction<R: Rng + ?Sized>(&self, dirs: &DirKind, rng: &mut R, tilde: bool) -> Vector {
        match dirs {
            DirKind::Uniform => uniform_unit_vector(self.dim, rng),
            DirKind::Concentrated(spread) => loop {
                let mut g = gaussian_vector(self.dim, rng).scale(*spread);
                g[0] += 1.0;
                let n = g.norm();
                if n > 1e-300 {
                    break g.scale(1.0 / n);
                }
            },
            DirKind::Fixed(wt, w) => {
                if tilde {
                    wt.clone()
                } else {
                    w.clone()
                }
            }
        }
    }

    /// Draws `(a, w̃, w)` for a rank-one model; `None` for other families.
    pub fn sample_rank_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<RankOneDraw> {
        match &self.kind {
            Kind::RankOne(law, dirs) => {
                let w_tilde = self.direction(dirs, rng, true);
                let w = self.direction(dirs, rng, false);
                let a = law.sample(rng).exp() * self.scale;
                Some(RankOneDraw { a, w_tilde, w })
            }
            _ => None,
        }
    }

    pub fn sample_a<R: Rng + ?Sized>(&self, rng: &mut R) -> Matrix {
        let d = self.dim;
        match &self.kind {
            Kind::Similarity(law) => {
                let r = haar_orthogonal(d, rng);
                let a = law.sample(rng).exp() * self.scale;
                r.scale(a)
            }
            Kind::RankOne(..) => self.sample_rank_one(rng).expect("rank one").matrix(),
            Kind::Invertible {
                matrices,
                cumulative,
                jitter,
            } => {
                let u: f64 = rng.random();
                let k = cumulative
                    .iter()
                    .position(|c| u < *c)
                    .unwrap_or(matrices.len() - 1);
                let mut m = matrices[k].clone();
                if *jitter > 0.0 && d >= 2 {
                    let p = rng.random_range(0..d);
                    let mut q = rng.random_range(0..d - 1);
                    if q >= p {
                        q += 1;
                    }
                    let angle: f64 = StandardNormal.sample(rng);
                    m = givens(d, p, q, angle * jitter).mul(&m);
                }
                m.scale(self.scale)
            }
            Kind::Nonnegative(law) => Matrix::from_fn(d, |_, _| law.sample(rng).exp() * self.scale),
            Kind::Diagonal(law) => {
                let l = law.sample(rng);
                Matrix::diag(&[l.exp() * self.scale, (-l).exp() * self.scale])
            }
            Kind::Permutation(p, j) => {
                let m = if rng.random::<bool>() { p } else { j };
                m.scale(self.scale)
            }
            Kind::Deterministic(m) => m.scale(self.scale),
        }
    }

    pub fn sample_b<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        match &self.b {
            BKind::Gaussian(sigma, mean) => {
                let g = gaussian_vector(self.dim, rng).scale(*sigma);
                match mean {
                    Some(m) => g.add(m),
                    None => g,
                }
            }
            BKind::HeavyLogTail(sigma, index) => {
                let u = uniform_unit_vector(self.dim, rng);
                let v: f64 = 1.0 - rng.random::<f64>();
                let p = v.powf(-1.0 / index);
                u.scale(sigma * p.exp())
            }
            BKind::Fixed(v) => v.clone(),
        }
    }

    /// One draw of `(A, B)`; `A` is always drawn before `B`.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (Matrix, Vector) {
        let a = self.sample_a(rng);
        let b = self.sample_b(rng);
        (a, b)
    }

    /// Uniform starting direction; restricted to the nonnegative cone for
    /// nonnegative models.
    pub fn uniform_start<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let mut u = uniform_unit_vector(self.dim, rng);
        if matches!(self.kind, Kind::Nonnegative(_)) {
            for i in 0..self.dim {
                u[i] = u[i].abs();
            }
        }
        u
    }

    fn is_rank_one(&self) -> bool {
        matches!(self.kind, Kind::RankOne(..))
    }

    fn is_similarity(&self) -> bool {
        matches!(self.kind, Kind::Similarity(_))
    }
}

/// One draw of `(A, B)` from `spec`.
pub fn sample_pair<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<(Matrix, Vector)> {
    Ok(spec.sampler()?.sample_pair(rng))
}

/// Draw from the stationary law of the forward direction chain.
///
/// Similarity models use the uniform law and rank-one models a fresh `w`;
/// other families push a uniform start forward `burn_in` steps.
pub fn sample_invariant_direction<R: Rng + ?Sized>(
    spec: &ModelSpec,
    rng: &mut R,
    burn_in: usize,
) -> Result<ProjectivePoint> {
    let sampler = spec.sampler()?;
    Ok(sampler.invariant_direction(rng, burn_in))
}

impl Sampler {
    pub fn invariant_direction<R: Rng + ?Sized>(&self, rng: &mut R, burn_in: usize) -> ProjectivePoint {
        if self.is_similarity() {
            return canonicalize(&uniform_unit_vector(self.dim, rng));
        }
        if self.is_rank_one() {
            let draw = self.sample_rank_one(rng).expect("rank one");
            return canonicalize(&draw.w);
        }
        let mut x = self.uniform_start(rng);
        for _ in 0..burn_in {
            let a = self.sample_a(rng);
            match act_on_unit(&a, &x) {
                (ProjectivePoint::Direction(y), _) => x = y,
                (ProjectivePoint::Zero, _) => return ProjectivePoint::Zero,
            }
        }
        canonicalize(&x)
    }
}

/// `E ln|⟨w̃, w⟩|` for independent uniform unit vectors in dimension `d`.
pub fn uniform_log_alignment(d: usize) -> f64 {
    if d == 1 {
        return 0.0;
    }
    0.5 * (digamma(0.5) - digamma(d as f64 / 2.0))
}

/// `E ln|⟨w̃, w⟩|` for independent planar directions drawn as the angle of
/// `e₁ + spread·g` with `g` standard Gaussian.
///
/// Uses `ln|cos x| = −ln 2 − Σ_k (−1)^k cos(2kx)/k`, so the expectation is
/// `−ln 2 − Σ_k (−1)^k c_k²/k` with `c_k` the cosine moments of the angle
/// density, computed by the trapezoid rule on the circle.
pub fn planar_concentrated_log_alignment(spread: f64) -> f64 {
    if spread <= 0.0 {
        return 0.0;
    }
    let mu = 1.0 / spread;
    let max_k = ((12.0 / spread).ceil() as usize).max(64);
    let m = (8 * max_k).max(4096);
    let h = std::f64::consts::TAU / m as f64;
    let head = (-0.5 * mu * mu).exp() / std::f64::consts::TAU;
    let density: Vec<f64> = (0..m)
        .map(|i| {
            let (s, c) = (i as f64 * h).sin_cos();
            let u = mu * c;
            let cdf = 0.5 * erfc(-u / std::f64::consts::SQRT_2);
            head + u * cdf * (-0.5 * mu * mu * s * s).exp() / (std::f64::consts::TAU).sqrt()
        })
        .collect();
    let mut total = -std::f64::consts::LN_2;
    for k in 1..=max_k {
        let ck: f64 = density
            .iter()
            .enumerate()
            .map(|(i, f)| f * (2.0 * k as f64 * i as f64 * h).cos())
            .sum::<f64>()
            * h;
        let term = ck * ck / k as f64;
        total -= if k % 2 == 0 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    total
}

/// Monte Carlo settings for iterative centring.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationBudget {
    pub horizon: u64,
    pub replicas: u64,
    pub max_rounds: usize,
    /// Steps used to draw a stationary starting direction.
    pub burn_in: usize,
    /// Samples used when only the alignment term needs estimating.
    pub alignment_samples: u64,
}

impl Default for CalibrationBudget {
    fn default() -> Self {
        CalibrationBudget {
            horizon: 100_000,
            replicas: 200,
            max_rounds: 5,
            burn_in: 200,
            alignment_samples: 4_000_000,
        }
    }
}

/// Returns `spec` with `log_scale_shift` chosen so that the Lyapunov
/// exponent vanishes (to within `tol`).
pub fn calibrate_centring(
    spec: &ModelSpec,
    tol: f64,
    budget: &CalibrationBudget,
    streams: &Streams,
) -> Result<ModelSpec> {
    spec.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let mut out = spec.clone();
    match &spec.family {
        Family::DiagonalCounterexample { .. } | Family::PermutationCounterexample { .. } => {
            Err(invalid(format!(
                "{} is centred by construction and cannot be recalibrated",
                spec.family_name()
            )))
        }
        Family::Similarity { mean_log_a, .. } => {
            out.log_scale_shift = -mean_log_a;
            Ok(out)
        }
        Family::RankOne {
            mean_log_a,
            directions,
            ..
        } => {
            let align = match directions {
                DirectionLaw::Uniform => uniform_log_alignment(spec.dim),
                DirectionLaw::Fixed { w_tilde, w } => {
                    let a = Vector::from_slice(w_tilde);
                    let b = Vector::from_slice(w);
                    (a.dot(&b).abs() / (a.norm() * b.norm())).ln()
                }
                DirectionLaw::Concentrated { spread } if spec.dim == 2 => {
                    planar_concentrated_log_alignment(*spread)
                }
                DirectionLaw::Concentrated { .. } => {
                    let (mean, se) = estimate_alignment(spec, budget.alignment_samples, streams)?;
                    if se > tol / 2.0 {
                        return Err(Error::CalibrationFailed {
                            rounds: 1,
                            last_estimate: mean,
                        });
                    }
                    mean
                }
            };
            out.log_scale_shift = -mean_log_a - align;
            Ok(out)
        }
        _ => {
            let mut last = f64::NAN;
            for round in 0..budget.max_rounds {
                let tagged = streams.reseed(&format!("calibration-{round}"));
                let est = crate::estimators::estimate_lyapunov_walk(
                    &out,
                    budget.horizon,
                    budget.replicas,
                    budget.burn_in,
                    &tagged,
                )?;
                last = est.point;
                if est.point.abs() <= tol {
                    return Ok(out);
                }
                out.log_scale_shift -= est.point;
            }
            Err(Error::CalibrationFailed {
                rounds: budget.max_rounds,
                last_estimate: last,
            })
        }
    }
}

fn estimate_alignment(spec: &ModelSpec, samples: u64, streams: &Streams) -> Result<(f64, f64)> {
    let sampler = spec.sampler()?;
    let chunks = 64u64;
    let per = samples.div_ceil(chunks).max(1);
    let parts = streams.map("alignment", chunks, |_, rng| {
        let mut acc = crate::estimators::MomentAccumulator::new();
        for _ in 0..per {
            let prev = sampler.sample_rank_one(rng).expect("rank one");
            let next = sampler.sample_rank_one(rng).expect("rank one");
            acc.push(next.w_tilde.dot(&prev.w).abs().ln());
        }
        acc
    });
    let acc = crate::estimators::MomentAccumulator::merge_all(parts);
    Ok((acc.mean(), acc.stderr()))
}

/// Draws `Σ_k A_1⋯A_{k-1}B_k`, stopping once `‖A_1⋯A_N‖·max|B|` drops below `tol`.
pub fn sample_contractive_fixed_point<R: Rng + ?Sized>(
    spec: &ModelSpec,
    rng: &mut R,
    tol: f64,
    max_terms: usize,
) -> Result<Vector> {
    let sampler = spec.sampler()?;
    let d = spec.dim;
    let mut prefix = LogScaledMatrix::identity(d);
    let mut sum = Vector::zeros(d);
    let mut b_scale: f64 = 1.0;
    for _ in 0..max_terms {
        let (a, b) = sampler.sample_pair(rng);
        b_scale = b_scale.max(b.norm());
        let term = prefix.to_matrix().mul_vec(&b);
        sum = sum.add(&term);
        prefix.right_multiply(&a);
        if prefix.is_zero() || prefix.log_scale() + b_scale.ln() < tol.ln() {
            return Ok(sum);
        }
    }
    Err(Error::NoContraction(max_terms))
}

/// Reference models used by the acceptance suite and the examples.
pub mod reference {
    use super::*;

    /// Two-dimensional Gaussian `B`.
    pub fn gaussian_b(sigma: f64) -> BLaw {
        BLaw::Gaussian { sigma, mean: None }
    }

    /// Centred similarity model, `ln a ~ N(0, sigma²)`.
    pub fn similarity(dim: usize, sigma: f64) -> ModelSpec {
        ModelSpec::new(
            Family::Similarity {
                mean_log_a: 0.0,
                sigma_log_a: sigma,
            },
            dim,
        )
    }

    /// Haar orthogonal matrices, no scaling.
    pub fn rotation(dim: usize) -> ModelSpec {
        similarity(dim, 0.0)
    }

    /// Contractive similarity model with `E ln a = mean_log_a < 0`.
    pub fn contractive(dim: usize, mean_log_a: f64, sigma: f64) -> ModelSpec {
        ModelSpec::new(
            Family::Similarity {
                mean_log_a,
                sigma_log_a: sigma,
            },
            dim,
        )
    }

    /// Centred rank-one model with uniform directions.
    pub fn rank_one_uniform(dim: usize, sigma: f64) -> ModelSpec {
        let shift = -uniform_log_alignment(dim);
        ModelSpec::new(
            Family::RankOne {
                mean_log_a: 0.0,
                sigma_log_a: sigma,
                directions: DirectionLaw::Uniform,
            },
            dim,
        )
        .with_shift(shift)
    }

    /// Rank-one model with directions concentrated near `e₁`; not yet centred.
    pub fn rank_one_concentrated(dim: usize, sigma: f64, spread: f64) -> ModelSpec {
        ModelSpec::new(
            Family::RankOne {
                mean_log_a: 0.0,
                sigma_log_a: sigma,
                directions: DirectionLaw::Concentrated { spread },
            },
            dim,
        )
    }

    /// Planar mixture of a hyperbolic matrix and an irrational rotation;
    /// not yet centred.
    pub fn invertible_proximal(h: f64, angle: f64, jitter: f64) -> ModelSpec {
        let (s, c) = angle.sin_cos();
        ModelSpec::new(
            Family::InvertibleProximal {
                matrices: vec![
                    vec![vec![h.exp(), 0.0], vec![0.0, (-h).exp()]],
                    vec![vec![c, -s], vec![s, c]],
                ],
                weights: vec![0.5, 0.5],
                jitter,
            },
            2,
        )
    }

    /// Lognormal entries; not yet centred.
    pub fn nonnegative(dim: usize, sigma: f64) -> ModelSpec {
        ModelSpec::new(
            Family::Nonnegative {
                mean_log_entry: 0.0,
                sigma_log_entry: sigma,
            },
            dim,
        )
    }

    pub fn diagonal_counterexample(s: f64) -> ModelSpec {
        ModelSpec::new(Family::DiagonalCounterexample { s }, 2)
    }

    pub fn permutation_counterexample(lambda: f64) -> ModelSpec {
        ModelSpec::new(Family::PermutationCounterexample { lambda }, 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::derive_stream;

    #[test]
    fn haar_matrices_are_orthogonal() {
        let mut rng = derive_stream(1, "haar", 0);
        for d in 1..=6 {
            for _ in 0..50 {
                let q = haar_orthogonal(d, &mut rng);
                let e = q.transpose().mul(&q).sub(&Matrix::identity(d)).max_abs();
                assert!(e < 1e-13, "d={d} err={e}");
            }
        }
    }

    #[test]
    fn haar_first_column_is_uniform_in_the_plane() {
        // mean of cos(2θ) and sin(2θ) of the first column vanish
        let mut rng = derive_stream(2, "haar", 0);
        let n = 200_000;
        let (mut c2, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let q = haar_orthogonal(3, &mut rng);
            let (x, y) = (q[(0, 0)], q[(1, 0)]);
            let t = y.atan2(x);
            c2 += (2.0 * t).cos();
            s2 += (2.0 * t).sin();
        }
        assert!((c2 / n as f64).abs() < 0.01);
        assert!((s2 / n as f64).abs() < 0.01);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let bad = ModelSpec::new(Family::DiagonalCounterexample { s: 0.3 }, 3);
        assert!(bad.validate().is_err());
        let bad = ModelSpec::new(
            Family::Similarity {
                mean_log_a: 0.0,
                sigma_log_a: -1.0,
            },
            2,
        );
        assert!(bad.validate().is_err());
        let bad = ModelSpec::new(Family::PermutationCounterexample { lambda: 1.0 }, 2);
        assert!(bad.validate().is_err());
        let bad = ModelSpec::new(
            Family::InvertibleProximal {
                matrices: vec![vec![vec![1.0, 2.0], vec![2.0, 4.0]]],
                weights: vec![1.0],
                jitter: 0.0,
            },
            2,
        );
        assert!(bad.validate().is_err());
        assert!(ModelSpec::new(Family::Deterministic { matrix: vec![] }, 0)
            .validate()
            .is_err());
    }

    #[test]
    fn uniform_alignment_closed_form() {
        assert!((uniform_log_alignment(2) + 2f64.ln()).abs() < 1e-14);
        // d = 3: E ln|u₁| with u₁ uniform on [-1, 1] is -1
        assert!((uniform_log_alignment(3) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn planar_concentrated_alignment_matches_quadrature() {
        // independent quadrature of the projected-normal density, confirmed
        // by 4·10⁶-sample Monte Carlo
        for (spread, expected) in [
            (0.15, -0.023618844073742182),
            (0.35, -0.17880362346041104),
            (1.0, -0.6478987335209244),
        ] {
            let got = planar_concentrated_log_alignment(spread);
            assert!((got - expected).abs() < 1e-9, "{spread}: {got}");
        }
        assert!((planar_concentrated_log_alignment(1e3) + 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn concentrated_alignment_agrees_with_sampling() {
        let spec = reference::rank_one_concentrated(2, 0.0, 0.3);
        let sampler = spec.sampler().unwrap();
        let mut rng = derive_stream(11, "align", 0);
        let mut acc = crate::estimators::MomentAccumulator::new();
        for _ in 0..200_000 {
            let a = sampler.sample_rank_one(&mut rng).unwrap();
            let b = sampler.sample_rank_one(&mut rng).unwrap();
            acc.push(a.w_tilde.dot(&b.w).abs().ln());
        }
        let exact = planar_concentrated_log_alignment(0.3);
        assert!((acc.mean() - exact).abs() < 4.0 * acc.stderr());
    }

    #[test]
    fn similarity_calibration_is_exact() {
        let spec = ModelSpec::new(
            Family::Similarity {
                mean_log_a: 0.37,
                sigma_log_a: 0.2,
            },
            3,
        );
        let c = calibrate_centring(&spec, 1e-3, &CalibrationBudget::default(), &Streams::new(1)).unwrap();
        assert_eq!(c.log_scale_shift, -0.37);
    }

    #[test]
    fn counterexamples_cannot_be_calibrated() {
        let spec = reference::diagonal_counterexample(0.3);
        assert!(calibrate_centring(&spec, 1e-3, &CalibrationBudget::default(), &Streams::new(1)).is_err());
    }

    #[test]
    fn invariant_direction_of_nonnegative_model_is_positive() {
        let spec = reference::nonnegative(3, 0.5);
        let mut rng = derive_stream(3, "nu", 0);
        for _ in 0..20 {
            let p = sample_invariant_direction(&spec, &mut rng, 50).unwrap();
            let v = p.representative().unwrap();
            assert!(v.iter().all(|x| *x > 0.0));
        }
    }

    #[test]
    fn fixed_point_of_zero_matrix_is_first_translation() {
        let spec = ModelSpec::new(
            Family::Deterministic {
                matrix: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            },
            2,
        )
        .with_b_law(BLaw::Fixed {
            vector: vec![1.5, -2.0],
        });
        let mut rng = derive_stream(4, "fp", 0);
        let x = sample_contractive_fixed_point(&spec, &mut rng, 1e-12, 10).unwrap();
        assert_eq!(x.as_slice(), &[1.5, -2.0]);
    }

    #[test]
    fn fixed_point_of_half_identity_sums_geometric_series() {
        let spec = ModelSpec::new(
            Family::Deterministic {
                matrix: vec![vec![0.5]],
            },
            1,
        )
        .with_b_law(BLaw::Fixed { vector: vec![1.0] });
        let mut rng = derive_stream(4, "fp", 1);
        let x = sample_contractive_fixed_point(&spec, &mut rng, 1e-14, 200).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn expanding_model_reports_no_contraction() {
        let spec = ModelSpec::new(
            Family::Deterministic {
                matrix: vec![vec![2.0, 0.0], vec![0.0, 2.0]],
            },
            2,
        );
        let mut rng = derive_stream(4, "fp", 2);
        assert!(matches!(
            sample_contractive_fixed_point(&spec, &mut rng, 1e-12, 100),
            Err(Error::NoContraction(100))
        ));
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = reference::invertible_proximal(0.4, 1.0, 0.05);
        let s = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(spec, back);
        let bad = s.replace("\"dim\"", "\"dimension\"");
        assert!(serde_json::from_str::<ModelSpec>(&bad).is_err());
    }
}
