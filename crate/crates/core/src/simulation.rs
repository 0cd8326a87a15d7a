//! Trajectory engine: affine trajectories, the projective walk and its
//! ladder times, reverse norm-comparison coefficients, block decomposition
//! at ladder epochs, and coupled pairs of directions.
//!
//! Every routine consumes its stream one `(A, B)` pair per step, so walks
//! and trajectories run on the same seed see the same matrices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{LogScaledMatrix, Matrix, Vector};
use crate::models::{ModelSpec, Sampler};
use crate::projective::{act_on_unit, canonicalize, ensure_unit, sine_distance, ProjectivePoint, SimplexPoint};
use crate::projective::hennion_distance;
use crate::stream::child_stream;

/// `ln|X|` above which the trajectory switches to log-tracked form.
const SATURATION_LOG: f64 = 700.0;
/// `ln|X|` below which a log-tracked trajectory returns to plain form.
const DESATURATION_LOG: f64 = 600.0;
/// Once `ln|A X|` exceeds `ln(1 + |B|)` by this much, `B` is dropped.
const DROP_TRANSLATION_GAP: f64 = 40.0;
/// Increases of the running supremum smaller than this are treated as rounding.
pub const STABILIZATION_TOL: f64 = 1e-10;

/// State of an affine trajectory. Very large states are kept as
/// `(ln|X|, X/|X|)`.
#[derive(Clone, Debug, PartialEq)]
pub enum AffineState {
    Plain(Vector),
    LogTracked { log_norm: f64, direction: Vector },
}

impl AffineState {
    pub fn new(x0: &Vector) -> Self {
        let mut s = AffineState::Plain(x0.clone());
        s.normalize_form();
        s
    }

    fn normalize_form(&mut self) {
        if let AffineState::Plain(x) = self {
            let n = x.norm();
            if n.is_finite() && n > 0.0 && n.ln() > SATURATION_LOG {
                *self = AffineState::LogTracked {
                    log_norm: n.ln(),
                    direction: x.scale(1.0 / n),
                };
            }
        }
    }

    /// `X ← A X + B`
    pub fn step(&mut self, a: &Matrix, b: &Vector) {
        match self {
            AffineState::Plain(x) => {
                let y = a.mul_vec(x).add(b);
                let n = y.norm();
                if n.is_finite() {
                    *x = y;
                    self.normalize_form();
                } else {
                    let nx = x.norm();
                    let dir = x.scale(1.0 / nx);
                    *self = log_step(nx.ln(), &dir, a, b);
                }
            }
            AffineState::LogTracked {
                log_norm,
                direction,
            } => {
                *self = log_step(*log_norm, direction, a, b);
            }
        }
    }

    /// `ln(1 + |X|)`
    pub fn log1p_norm(&self) -> f64 {
        match self {
            AffineState::Plain(x) => x.norm().ln_1p(),
            AffineState::LogTracked { log_norm, .. } => log_norm + (-log_norm).exp().ln_1p(),
        }
    }

    /// `ln|X|` (`-inf` at the origin).
    pub fn log_norm(&self) -> f64 {
        match self {
            AffineState::Plain(x) => x.norm().ln(),
            AffineState::LogTracked { log_norm, .. } => *log_norm,
        }
    }

    pub fn within(&self, radius: f64) -> bool {
        match self {
            AffineState::Plain(x) => x.norm() <= radius,
            AffineState::LogTracked { .. } => false,
        }
    }

    pub fn is_log_tracked(&self) -> bool {
        matches!(self, AffineState::LogTracked { .. })
    }

    /// The state as a plain vector; infinite entries if it does not fit.
    pub fn to_vector(&self) -> Vector {
        match self {
            AffineState::Plain(x) => x.clone(),
            AffineState::LogTracked {
                log_norm,
                direction,
            } => direction.scale(log_norm.exp()),
        }
    }
}

fn log_step(log_norm: f64, dir: &Vector, a: &Matrix, b: &Vector) -> AffineState {
    let y = a.mul_vec(dir);
    let ny = y.norm();
    if ny == 0.0 {
        let mut s = AffineState::Plain(b.clone());
        s.normalize_form();
        return s;
    }
    let la = log_norm + ny.ln();
    let nb = b.norm();
    if la - nb.ln_1p() > DROP_TRANSLATION_GAP {
        return AffineState::LogTracked {
            log_norm: la,
            direction: y.scale(1.0 / ny),
        };
    }
    let lb = nb.ln();
    let m = la.max(lb);
    let v = y.scale((log_norm - m).exp()).axpy((-m).exp(), b);
    let nv = v.norm();
    let lv = m + nv.ln();
    if lv < DESATURATION_LOG {
        AffineState::Plain(v.scale(m.exp()))
    } else {
        AffineState::LogTracked {
            log_norm: lv,
            direction: v.scale(1.0 / nv),
        }
    }
}

/// Direction chain `V̄_n = A_n·V̄_{n-1}` with cumulative log gain `S_n`.
#[derive(Clone, Debug)]
pub struct DirectionChain {
    direction: Option<Vector>,
    log_gain: f64,
}

impl DirectionChain {
    pub fn new(start: &ProjectivePoint) -> Self {
        DirectionChain {
            direction: start.representative().cloned(),
            log_gain: if start.is_zero() { f64::NEG_INFINITY } else { 0.0 },
        }
    }

    /// Advances one step and returns the step's log gain.
    pub fn step(&mut self, a: &Matrix) -> f64 {
        let Some(x) = &self.direction else {
            return f64::NEG_INFINITY;
        };
        let (p, g) = act_on_unit(a, x);
        match p {
            ProjectivePoint::Direction(y) => self.direction = Some(y),
            ProjectivePoint::Zero => self.direction = None,
        }
        self.log_gain += g;
        g
    }

    pub fn log_gain(&self) -> f64 {
        self.log_gain
    }

    pub fn is_absorbed(&self) -> bool {
        self.direction.is_none()
    }

    pub fn point(&self) -> ProjectivePoint {
        match &self.direction {
            Some(v) => ProjectivePoint::Direction(v.clone()),
            None => ProjectivePoint::Zero,
        }
    }

    pub fn unit(&self) -> Option<&Vector> {
        self.direction.as_ref()
    }
}

fn start_point(spec_dim: usize, p: &ProjectivePoint) -> Result<()> {
    match p.representative() {
        None => Ok(()),
        Some(v) => {
            if v.dim() != spec_dim {
                return Err(Error::DimensionMismatch {
                    expected: spec_dim,
                    got: v.dim(),
                });
            }
            ensure_unit(v)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub n_steps: u64,
    /// Radius `K` of the return ball.
    pub radius: f64,
    /// Sampling stride for the stored series.
    pub stride: u64,
    /// Length of the windows over which minima are recorded.
    pub window: u64,
    /// Steps after `late_start` count as the late window.
    pub late_start: u64,
}

impl TrajectoryConfig {
    pub fn new(n_steps: u64, radius: f64) -> Self {
        TrajectoryConfig {
            n_steps,
            radius,
            stride: (n_steps / 1000).max(1),
            window: (n_steps / 20).max(1),
            late_start: n_steps / 2,
        }
    }
}

/// Summary of one affine trajectory started at `x0`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStats {
    pub n_steps: u64,
    pub stride: u64,
    /// `ln(1 + |X_n|)` at `n = stride, 2·stride, …`
    pub log_norm_samples: Vec<f64>,
    /// `S_n` of the companion direction chain at the same times.
    pub s_samples: Vec<f64>,
    pub window: u64,
    /// Minimum of `ln(1 + |X_n|)` over each window.
    pub window_min_log_norm: Vec<f64>,
    pub return_count: u64,
    pub late_start: u64,
    pub late_return_count: u64,
    pub final_direction: ProjectivePoint,
    pub final_state: AffineState,
}

impl TrajectoryStats {
    pub fn late_steps(&self) -> u64 {
        self.n_steps - self.late_start
    }

    pub fn late_return_frequency(&self) -> f64 {
        self.late_return_count as f64 / self.late_steps().max(1) as f64
    }

    pub fn last_window_min(&self) -> f64 {
        self.window_min_log_norm.last().copied().unwrap_or(f64::NAN)
    }

    /// Least-squares slope of `ln(1 + |X_n|)` against `n` over the late samples.
    pub fn lognorm_slope(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .log_norm_samples
            .iter()
            .enumerate()
            .map(|(k, y)| (((k as u64 + 1) * self.stride) as f64, *y))
            .filter(|(n, _)| *n > self.late_start as f64)
            .collect();
        crate::estimators::ols(&pts).map(|f| f.slope).unwrap_or(f64::NAN)
    }
}

/// `n` steps of `X_{k+1} = A_{k+1} X_k + B_{k+1}` from `x0`.
pub fn run_affine_trajectory<R: Rng + ?Sized>(
    spec: &ModelSpec,
    x0: &Vector,
    cfg: &TrajectoryConfig,
    rng: &mut R,
) -> Result<TrajectoryStats> {
    let sampler = spec.sampler()?;
    sampler.affine_trajectory(x0, cfg, rng)
}

impl Sampler {
    pub fn affine_trajectory<R: Rng + ?Sized>(
        &self,
        x0: &Vector,
        cfg: &TrajectoryConfig,
        rng: &mut R,
    ) -> Result<TrajectoryStats> {
        if x0.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x0.dim(),
            });
        }
        if cfg.stride == 0 || cfg.window == 0 || cfg.late_start > cfg.n_steps {
            return Err(Error::InvalidArgument("bad trajectory configuration".into()));
        }
        let mut state = AffineState::new(x0);
        let mut chain = DirectionChain::new(&canonicalize(&Vector::basis(self.dim(), 0)));
        let cap = (cfg.n_steps / cfg.stride) as usize;
        let mut log_norm_samples = Vec::with_capacity(cap);
        let mut s_samples = Vec::with_capacity(cap);
        let mut window_min = Vec::with_capacity((cfg.n_steps / cfg.window) as usize + 1);
        let mut current_min = f64::INFINITY;
        let (mut returns, mut late_returns) = (0u64, 0u64);
        for n in 1..=cfg.n_steps {
            let (a, b) = self.sample_pair(rng);
            chain.step(&a);
            state.step(&a, &b);
            if state.within(cfg.radius) {
                returns += 1;
                if n > cfg.late_start {
                    late_returns += 1;
                }
            }
            let ln = state.log1p_norm();
            current_min = current_min.min(ln);
            if n % cfg.window == 0 || n == cfg.n_steps {
                window_min.push(current_min);
                current_min = f64::INFINITY;
            }
            if n % cfg.stride == 0 {
                log_norm_samples.push(ln);
                s_samples.push(chain.log_gain());
            }
        }
        Ok(TrajectoryStats {
            n_steps: cfg.n_steps,
            stride: cfg.stride,
            log_norm_samples,
            s_samples,
            window: cfg.window,
            window_min_log_norm: window_min,
            return_count: returns,
            late_start: cfg.late_start,
            late_return_count: late_returns,
            final_direction: chain.point(),
            final_state: state,
        })
    }
}

/// `S_1, …, S_n` of the direction chain from `v0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectiveWalk {
    pub s_series: Vec<f64>,
    pub final_direction: ProjectivePoint,
    /// First step at which the direction fell into a kernel.
    pub absorbed_at: Option<u64>,
}

pub fn run_projective_walk<R: Rng + ?Sized>(
    spec: &ModelSpec,
    v0: &ProjectivePoint,
    n: u64,
    rng: &mut R,
) -> Result<ProjectiveWalk> {
    let sampler = spec.sampler()?;
    start_point(spec.dim, v0)?;
    Ok(sampler.projective_walk(v0, n, rng))
}

impl Sampler {
    pub fn projective_walk<R: Rng + ?Sized>(&self, v0: &ProjectivePoint, n: u64, rng: &mut R) -> ProjectiveWalk {
        let mut chain = DirectionChain::new(v0);
        let mut s_series = Vec::with_capacity(n as usize);
        let mut absorbed_at = if v0.is_zero() { Some(0) } else { None };
        for k in 1..=n {
            let (a, _b) = self.sample_pair(rng);
            chain.step(&a);
            if absorbed_at.is_none() && chain.is_absorbed() {
                absorbed_at = Some(k);
            }
            s_series.push(chain.log_gain());
        }
        ProjectiveWalk {
            s_series,
            final_direction: chain.point(),
            absorbed_at,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LadderValue {
    Hit(u64),
    Censored(u64),
}

/// First `n` with `S_n ≤ ln ρ`, or censoring at `cap`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderSample {
    pub value: LadderValue,
    pub rho: f64,
    pub cap: u64,
}

impl LadderSample {
    pub fn steps(&self) -> u64 {
        match self.value {
            LadderValue::Hit(n) | LadderValue::Censored(n) => n,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self.value, LadderValue::Censored(_))
    }

    /// Whether `ℓ > n` is known to hold.
    pub fn exceeds(&self, n: u64) -> bool {
        match self.value {
            LadderValue::Hit(m) => m > n,
            LadderValue::Censored(c) => n <= c,
        }
    }
}

fn check_rho_cap(rho: f64, cap: u64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!("rho must lie in (0, 1), got {rho}")));
    }
    if cap == 0 {
        return Err(Error::InvalidArgument("cap must be positive".into()));
    }
    Ok(())
}

pub fn ladder_time<R: Rng + ?Sized>(
    spec: &ModelSpec,
    v0: &ProjectivePoint,
    rho: f64,
    cap: u64,
    rng: &mut R,
) -> Result<LadderSample> {
    check_rho_cap(rho, cap)?;
    start_point(spec.dim, v0)?;
    Ok(spec.sampler()?.ladder_time(v0, rho, cap, rng))
}

impl Sampler {
    pub fn ladder_time<R: Rng + ?Sized>(&self, v0: &ProjectivePoint, rho: f64, cap: u64, rng: &mut R) -> LadderSample {
        let threshold = rho.ln();
        let mut chain = DirectionChain::new(v0);
        for n in 1..=cap {
            let (a, _b) = self.sample_pair(rng);
            chain.step(&a);
            if chain.log_gain() <= threshold {
                return LadderSample {
                    value: LadderValue::Hit(n),
                    rho,
                    cap,
                };
            }
        }
        LadderSample {
            value: LadderValue::Censored(cap),
            rho,
            cap,
        }
    }
}

/// `ln C` where `C = sup_{n ≤ horizon} ‖A_{n,1}‖ / |A_{n,1} v̄|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RncSample {
    /// Natural log of the coefficient; `+inf` when the direction is absorbed.
    pub log_value: f64,
    pub horizon: u64,
    /// The supremum did not increase over `(horizon/2, horizon]`.
    pub stabilized: bool,
}

/// Running supremum of `ln‖P_n‖ - (1/r)·ln|L_n w̄|` where `P_n` is the
/// base product and `L_n` a lifted product driven by the same factors.
#[derive(Clone, Debug)]
pub(crate) struct RncTracker {
    product: LogScaledMatrix,
    chain: DirectionChain,
    inv_r: f64,
    sup: f64,
    last_increase: u64,
    steps: u64,
}

impl RncTracker {
    pub(crate) fn new(dim: usize, start: &ProjectivePoint, inv_r: f64) -> Self {
        RncTracker {
            product: LogScaledMatrix::identity(dim),
            chain: DirectionChain::new(start),
            inv_r,
            sup: f64::NEG_INFINITY,
            last_increase: 0,
            steps: 0,
        }
    }

    /// Current ratio `ln‖P_n‖ - (1/r)·S_n`.
    pub(crate) fn step(&mut self, base: &Matrix, lifted: &Matrix) -> f64 {
        self.steps += 1;
        self.product.left_multiply(base);
        self.chain.step(lifted);
        let ratio = if self.chain.is_absorbed() {
            f64::INFINITY
        } else {
            self.product.log_scale() - self.chain.log_gain() * self.inv_r
        };
        if ratio > self.sup + STABILIZATION_TOL || (self.sup == f64::NEG_INFINITY) {
            self.last_increase = self.steps;
        }
        if ratio > self.sup || ratio.is_nan() {
            self.sup = if ratio.is_nan() { f64::INFINITY } else { ratio };
        }
        ratio
    }

    pub(crate) fn sample(&self) -> RncSample {
        RncSample {
            log_value: self.sup.max(0.0),
            horizon: self.steps,
            stabilized: self.last_increase <= self.steps / 2,
        }
    }

    pub(crate) fn skip(&mut self) {
        self.steps += 1;
    }

    pub(crate) fn is_infinite(&self) -> bool {
        self.sup == f64::INFINITY
    }
}

pub fn rnc_coefficient<R: Rng + ?Sized>(
    spec: &ModelSpec,
    v0: &ProjectivePoint,
    horizon: u64,
    rng: &mut R,
) -> Result<RncSample> {
    Ok(rnc_profile(spec, v0, &[horizon], rng)?.remove(0))
}

/// RNC samples at nested horizons along one shared trajectory.
pub fn rnc_profile<R: Rng + ?Sized>(
    spec: &ModelSpec,
    v0: &ProjectivePoint,
    checkpoints: &[u64],
    rng: &mut R,
) -> Result<Vec<RncSample>> {
    start_point(spec.dim, v0)?;
    spec.sampler()?.rnc_profile(v0, checkpoints, rng)
}

impl Sampler {
    pub fn rnc_profile<R: Rng + ?Sized>(
        &self,
        v0: &ProjectivePoint,
        checkpoints: &[u64],
        rng: &mut R,
    ) -> Result<Vec<RncSample>> {
        if checkpoints.is_empty() || checkpoints.windows(2).any(|w| w[0] >= w[1]) || checkpoints[0] == 0 {
            return Err(Error::InvalidArgument(
                "checkpoints must be positive and strictly increasing".into(),
            ));
        }
        let mut tracker = RncTracker::new(self.dim(), v0, 1.0);
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut next = 0;
        let last = *checkpoints.last().expect("nonempty");
        for n in 1..=last {
            let (a, _b) = self.sample_pair(rng);
            if !tracker.is_infinite() {
                tracker.step(&a, &a);
            } else {
                tracker.skip();
            }
            if n == checkpoints[next] {
                out.push(tracker.sample());
                next += 1;
            }
        }
        Ok(out)
    }
}

/// Pieces of the pathwise bound on the translation part of one block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathwiseTerms {
    /// `ln⁺|B̃|`
    pub log_plus_translation: f64,
    /// `ln⁺ ℓ`
    pub log_plus_length: f64,
    /// `max_{1≤i<ℓ} ln⁺ C_{i+1}(V̄_i)`, suprema truncated at `ℓ`.
    pub max_log_plus_rnc: f64,
    /// `max_{i≤ℓ} ln⁺|B_i|`
    pub max_log_plus_input: f64,
    /// `ln C_1(V̄_0)` truncated at `ℓ`.
    pub log_rnc_first: f64,
}

impl PathwiseTerms {
    pub fn bound(&self) -> f64 {
        self.log_plus_length + self.max_log_plus_rnc + self.max_log_plus_input
    }

    pub fn holds(&self) -> bool {
        self.log_plus_translation <= self.bound() + 1e-9
    }
}

/// One block `(Ã, B̃)` between consecutive ladder epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSample {
    pub block_length: u64,
    pub censored: bool,
    /// `ln‖Ã‖`
    pub log_norm_a_block: f64,
    /// `ln(1 + |B̃|)`
    pub log_norm_b_block: f64,
    pub terms: PathwiseTerms,
}

/// Splits a trajectory into blocks at ladder epochs, starting every block
/// from a fresh stationary direction.
pub fn block_decomposition<R: Rng + ?Sized>(
    spec: &ModelSpec,
    rho: f64,
    n_blocks: usize,
    cap_per_block: u64,
    burn_in: usize,
    rng: &mut R,
) -> Result<Vec<BlockSample>> {
    check_rho_cap(rho, cap_per_block)?;
    let sampler = spec.sampler()?;
    let mut dir_rng = child_stream(rng);
    let threshold = rho.ln();
    let d = spec.dim;
    let mut out = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let start = sampler.invariant_direction(&mut dir_rng, burn_in);
        let mut chain = DirectionChain::new(&start);
        let mut product = LogScaledMatrix::identity(d);
        let mut state = AffineState::new(&Vector::zeros(d));
        let mut mats: Vec<Matrix> = Vec::new();
        let mut gains = vec![0.0];
        let mut max_input = 0.0f64;
        let mut length = cap_per_block;
        let mut censored = true;
        for n in 1..=cap_per_block {
            let (a, b) = sampler.sample_pair(rng);
            product.left_multiply(&a);
            chain.step(&a);
            state.step(&a, &b);
            max_input = max_input.max(b.norm().ln().max(0.0));
            mats.push(a);
            gains.push(chain.log_gain());
            if chain.log_gain() <= threshold {
                length = n;
                censored = false;
                break;
            }
        }
        let l = length as usize;
        // truncated coefficients C_{i+1}(V̄_i), i = 0..ℓ-1
        let mut log_rnc_first = 0.0;
        let mut max_rnc = 0.0f64;
        for i in 0..l {
            let mut p = LogScaledMatrix::identity(d);
            let mut sup = f64::NEG_INFINITY;
            for n in i + 1..=l {
                p.left_multiply(&mats[n - 1]);
                let ratio = p.log_scale() - (gains[n] - gains[i]);
                let ratio = if ratio.is_nan() { f64::INFINITY } else { ratio };
                sup = sup.max(ratio);
            }
            if i == 0 {
                log_rnc_first = sup.max(0.0);
            } else {
                max_rnc = max_rnc.max(sup.max(0.0));
            }
        }
        let log_b = state.log_norm();
        out.push(BlockSample {
            block_length: length,
            censored,
            log_norm_a_block: product.log_scale(),
            log_norm_b_block: state.log1p_norm(),
            terms: PathwiseTerms {
                log_plus_translation: log_b.max(0.0),
                log_plus_length: (length as f64).ln(),
                max_log_plus_rnc: max_rnc,
                max_log_plus_input: max_input,
                log_rnc_first,
            },
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Sine of the angle.
    Sine,
    /// Hennion's metric on the nonnegative cone.
    Hennion,
}

/// Distances between two directions pushed by the same matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct PairWalk {
    pub metric: Metric,
    /// Distance after steps `1..=n` (shorter if absorbed).
    pub distances: Vec<f64>,
    /// Sine distances alongside Hennion distances (empty for the sine metric).
    pub sine_distances: Vec<f64>,
    pub absorbed_at: Option<u64>,
}

pub fn contraction_pair_walk<R: Rng + ?Sized>(
    spec: &ModelSpec,
    u0: &ProjectivePoint,
    v0: &ProjectivePoint,
    n: u64,
    rng: &mut R,
) -> Result<PairWalk> {
    start_point(spec.dim, u0)?;
    start_point(spec.dim, v0)?;
    if u0.is_zero() || v0.is_zero() {
        return Err(Error::ZeroPoint);
    }
    spec.sampler()?.pair_walk(u0, v0, n, Metric::Sine, rng)
}

/// Pair walk measured in Hennion's metric; the model must be nonnegative.
pub fn hennion_pair_walk<R: Rng + ?Sized>(
    spec: &ModelSpec,
    u0: &SimplexPoint,
    v0: &SimplexPoint,
    n: u64,
    rng: &mut R,
) -> Result<PairWalk> {
    if !matches!(spec.family, crate::models::Family::Nonnegative { .. }) {
        return Err(Error::InvalidModel("Hennion walks need a nonnegative model".into()));
    }
    spec.sampler()?
        .pair_walk(&u0.to_projective(), &v0.to_projective(), n, Metric::Hennion, rng)
}

impl Sampler {
    pub fn pair_walk<R: Rng + ?Sized>(
        &self,
        u0: &ProjectivePoint,
        v0: &ProjectivePoint,
        n: u64,
        metric: Metric,
        rng: &mut R,
    ) -> Result<PairWalk> {
        let mut u = u0.representative().ok_or(Error::ZeroPoint)?.clone();
        let mut v = v0.representative().ok_or(Error::ZeroPoint)?.clone();
        let mut distances = Vec::with_capacity(n as usize);
        let mut sines = Vec::new();
        for k in 1..=n {
            let (a, _b) = self.sample_pair(rng);
            let (pu, _) = act_on_unit(&a, &u);
            let (pv, _) = act_on_unit(&a, &v);
            match (pu, pv) {
                (ProjectivePoint::Direction(x), ProjectivePoint::Direction(y)) => {
                    u = x;
                    v = y;
                }
                _ => {
                    return Ok(PairWalk {
                        metric,
                        distances,
                        sine_distances: sines,
                        absorbed_at: Some(k),
                    })
                }
            }
            match metric {
                Metric::Sine => distances.push(sine_distance(&u, &v)),
                Metric::Hennion => {
                    let su = SimplexPoint::new(&u)?;
                    let sv = SimplexPoint::new(&v)?;
                    distances.push(hennion_distance(&su, &sv));
                    sines.push(sine_distance(&u, &v));
                }
            }
        }
        Ok(PairWalk {
            metric,
            distances,
            sine_distances: sines,
            absorbed_at: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{reference, BLaw, Family};
    use crate::stream::derive_stream;

    fn fixed(matrix: Vec<Vec<f64>>, b: Vec<f64>) -> ModelSpec {
        let d = matrix.len();
        ModelSpec::new(Family::Deterministic { matrix }, d).with_b_law(BLaw::Fixed { vector: b })
    }

    fn e(d: usize, i: usize) -> ProjectivePoint {
        canonicalize(&Vector::basis(d, i))
    }

    #[test]
    fn zero_matrix_trajectory_sits_at_translation() {
        let spec = fixed(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![3.0, 4.0]);
        let mut rng = derive_stream(1, "t", 0);
        let stats = run_affine_trajectory(&spec, &Vector::zeros(2), &TrajectoryConfig::new(100, 5.0), &mut rng).unwrap();
        assert_eq!(stats.final_state, AffineState::Plain(Vector::from_slice(&[3.0, 4.0])));
        assert_eq!(stats.return_count, 100);
        assert_eq!(stats.s_samples.last().copied(), Some(f64::NEG_INFINITY));
    }

    #[test]
    fn identity_without_translation_is_constant() {
        let spec = fixed(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]);
        let mut rng = derive_stream(1, "t", 1);
        let x0 = Vector::from_slice(&[0.3, -0.4]);
        let stats = run_affine_trajectory(&spec, &x0, &TrajectoryConfig::new(1000, 1.0), &mut rng).unwrap();
        assert_eq!(stats.final_state, AffineState::Plain(x0));
        assert_eq!(stats.return_count, 1000);
    }

    #[test]
    fn doubling_saturates_without_overflow() {
        let spec = fixed(vec![vec![2.0, 0.0], vec![0.0, 2.0]], vec![1.0, 0.0]);
        let mut rng = derive_stream(1, "t", 2);
        let n = 10_000u64;
        let stats = run_affine_trajectory(&spec, &Vector::zeros(2), &TrajectoryConfig::new(n, 1.0), &mut rng).unwrap();
        assert!(stats.final_state.is_log_tracked());
        let ln = stats.final_state.log_norm();
        // X_n = (2^n - 1) e₁
        assert!((ln - n as f64 * 2f64.ln()).abs() < 1e-9 * ln);
        assert!(stats.log_norm_samples.iter().all(|x| x.is_finite()));
        assert_eq!(stats.return_count, 1);
    }

    #[test]
    fn log_tracked_state_returns_to_plain_form() {
        let mut s = AffineState::new(&Vector::from_slice(&[1e300, 0.0]));
        let up = Matrix::diag(&[1e10, 1e10]);
        let down = Matrix::diag(&[1e-30, 1e-30]);
        let b = Vector::from_slice(&[0.0, 1.0]);
        s.step(&up, &b);
        assert!(s.is_log_tracked());
        for _ in 0..20 {
            s.step(&down, &b);
        }
        assert!(!s.is_log_tracked());
        let x = s.to_vector();
        assert!((x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let spec = reference::similarity(3, 0.5);
        let cfg = TrajectoryConfig::new(5000, 10.0);
        let a = run_affine_trajectory(&spec, &Vector::zeros(3), &cfg, &mut derive_stream(5, "t", 3)).unwrap();
        let b = run_affine_trajectory(&spec, &Vector::zeros(3), &cfg, &mut derive_stream(5, "t", 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ladder_of_shrinking_scalar_is_immediate() {
        let rho = 0.3;
        let spec = fixed(vec![vec![rho / 2.0, 0.0], vec![0.0, rho / 2.0]], vec![0.0, 0.0]);
        let s = ladder_time(&spec, &e(2, 0), rho, 100, &mut derive_stream(1, "l", 0)).unwrap();
        assert_eq!(s.value, LadderValue::Hit(1));
    }

    #[test]
    fn ladder_of_expanding_scalar_is_censored() {
        let spec = fixed(vec![vec![2.0, 0.0], vec![0.0, 2.0]], vec![0.0, 0.0]);
        let s = ladder_time(&spec, &e(2, 0), 0.5, 77, &mut derive_stream(1, "l", 1)).unwrap();
        assert_eq!(s.value, LadderValue::Censored(77));
    }

    #[test]
    fn ladder_of_zero_matrix_is_one() {
        let spec = fixed(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![1.0, 0.0]);
        let s = ladder_time(&spec, &e(2, 1), 0.5, 10, &mut derive_stream(1, "l", 2)).unwrap();
        assert_eq!(s.value, LadderValue::Hit(1));
    }

    #[test]
    fn ladder_rejects_bad_rho() {
        let spec = reference::similarity(2, 1.0);
        assert!(ladder_time(&spec, &e(2, 0), 1.0, 10, &mut derive_stream(1, "l", 3)).is_err());
        assert!(ladder_time(&spec, &e(2, 0), 0.0, 10, &mut derive_stream(1, "l", 3)).is_err());
    }

    #[test]
    fn rnc_of_identity_is_one() {
        let spec = fixed(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]);
        let s = rnc_coefficient(&spec, &e(2, 0), 100, &mut derive_stream(1, "r", 0)).unwrap();
        assert_eq!(s.log_value, 0.0);
        assert!(s.stabilized);
    }

    #[test]
    fn rnc_of_kernel_direction_is_infinite() {
        let spec = fixed(vec![vec![1.0, 0.0], vec![0.0, 0.0]], vec![0.0, 0.0]);
        let s = rnc_coefficient(&spec, &e(2, 1), 10, &mut derive_stream(1, "r", 1)).unwrap();
        assert_eq!(s.log_value, f64::INFINITY);
    }

    #[test]
    fn rnc_profile_is_monotone_in_horizon() {
        let spec = reference::invertible_proximal(0.4, 1.0, 0.0);
        let start = e(2, 0);
        let prof = rnc_profile(&spec, &start, &[1, 10, 100, 1000], &mut derive_stream(1, "r", 2)).unwrap();
        for w in prof.windows(2) {
            assert!(w[1].log_value >= w[0].log_value);
        }
        let alone = rnc_coefficient(&spec, &start, 1000, &mut derive_stream(1, "r", 2)).unwrap();
        assert_eq!(alone.log_value, prof[3].log_value);
    }

    #[test]
    fn rank_one_pair_collapses_in_one_step() {
        let spec = reference::rank_one_uniform(3, 0.5);
        let w = contraction_pair_walk(&spec, &e(3, 0), &e(3, 1), 5, &mut derive_stream(1, "p", 0)).unwrap();
        assert!(w.distances.iter().all(|d| *d < 1e-12));
    }

    #[test]
    fn similarity_pair_keeps_distance() {
        let spec = reference::similarity(3, 0.5);
        let u = canonicalize(&Vector::from_slice(&[1.0, 2.0, 0.5]));
        let v = canonicalize(&Vector::from_slice(&[-1.0, 0.3, 0.2]));
        let d0 = crate::projective::delta(&u, &v).unwrap();
        let w = contraction_pair_walk(&spec, &u, &v, 200, &mut derive_stream(1, "p", 1)).unwrap();
        assert!(w.distances.iter().all(|d| (d - d0).abs() < 1e-12));
    }

    #[test]
    fn block_lengths_and_pathwise_bound() {
        let spec = reference::similarity(2, 1.0);
        let blocks = block_decomposition(&spec, 0.5, 200, 500, 10, &mut derive_stream(1, "b", 0)).unwrap();
        for b in &blocks {
            assert!(b.block_length >= 1);
            if !b.censored {
                assert!(b.terms.holds(), "{:?}", b);
                assert!(b.log_norm_a_block <= 0.5f64.ln() + b.terms.log_rnc_first + 1e-9);
            }
        }
    }
}
