//! Directions in projective space, the sine distance, the Hennion metric on
//! the nonnegative cone, and the action of matrices on directions.

use crate::error::{Error, Result};
use crate::linalg::{operator_norm, Matrix, Vector, UNIT_TOL};

/// A line through the origin, or the absorbing zero state.
///
/// Directions are stored as unit vectors whose first nonzero coordinate is
/// positive, so each line has exactly one representative.
#[derive(Clone, Debug, PartialEq)]
pub enum ProjectivePoint {
    Zero,
    Direction(Vector),
}

impl ProjectivePoint {
    pub fn is_zero(&self) -> bool {
        matches!(self, ProjectivePoint::Zero)
    }

    pub fn representative(&self) -> Option<&Vector> {
        match self {
            ProjectivePoint::Zero => None,
            ProjectivePoint::Direction(v) => Some(v),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.representative().map(Vector::dim)
    }
}

/// Canonical representative of the line spanned by `v` (or `Zero`).
pub fn canonicalize(v: &Vector) -> ProjectivePoint {
    let n = v.norm();
    if n == 0.0 || !n.is_finite() {
        return ProjectivePoint::Zero;
    }
    let mut u = v.scale(1.0 / n);
    flip_to_canonical(&mut u);
    ProjectivePoint::Direction(u)
}

fn flip_to_canonical(u: &mut Vector) {
    let first = u.iter().copied().find(|x| *x != 0.0);
    if first.is_some_and(|x| x < 0.0) {
        u.scale_mut(-1.0);
    }
}

/// Sine of the angle between two lines, in `[0, 1]`.
///
/// Computed as the length of the component of `u` orthogonal to `v`, which
/// keeps full relative accuracy for nearly equal directions.
pub fn delta(p: &ProjectivePoint, q: &ProjectivePoint) -> Result<f64> {
    let (u, v) = match (p, q) {
        (ProjectivePoint::Direction(u), ProjectivePoint::Direction(v)) => (u, v),
        _ => return Err(Error::ZeroPoint),
    };
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            got: v.dim(),
        });
    }
    Ok(sine_distance(u, v))
}

/// Sine distance between unit vectors.
pub fn sine_distance(u: &Vector, v: &Vector) -> f64 {
    let c = u.dot(v);
    u.axpy(-c, v).norm().clamp(0.0, 1.0)
}

/// Sine distance in the plane via the 2x2 determinant; used as a cross-check.
pub fn sine_distance_2d(u: &Vector, v: &Vector) -> f64 {
    (u[0] * v[1] - u[1] * v[0]).abs().clamp(0.0, 1.0)
}

/// Action of `a` on a direction: `(canonical(a·x), ln|a·x|)` for the unit
/// representative `x`. Kernel directions go to `(Zero, -inf)`.
pub fn act(a: &Matrix, p: &ProjectivePoint) -> (ProjectivePoint, f64) {
    match p {
        ProjectivePoint::Zero => (ProjectivePoint::Zero, f64::NEG_INFINITY),
        ProjectivePoint::Direction(x) => act_on_unit(a, x),
    }
}

/// Same as [`act`] for a unit representative.
pub fn act_on_unit(a: &Matrix, x: &Vector) -> (ProjectivePoint, f64) {
    let mut y = a.mul_vec(x);
    let n = y.norm();
    if n == 0.0 || !n.is_normal() {
        return (ProjectivePoint::Zero, f64::NEG_INFINITY);
    }
    y.scale_mut(1.0 / n);
    flip_to_canonical(&mut y);
    (ProjectivePoint::Direction(y), n.ln())
}

/// `‖a‖ / |a·x|` for a direction `x`; infinite on the kernel.
pub fn norm_gain_ratio(a: &Matrix, p: &ProjectivePoint) -> Result<f64> {
    let x = p.representative().ok_or(Error::ZeroPoint)?;
    let ax = a.mul_vec(x).norm();
    Ok(operator_norm(a) / ax)
}

/// A unit vector with nonnegative entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexPoint(Vector);

impl SimplexPoint {
    /// Normalizes a nonnegative, nonzero vector.
    pub fn new(v: &Vector) -> Result<Self> {
        if let Some((index, &value)) = v.as_slice().iter().enumerate().find(|(_, x)| **x < 0.0) {
            return Err(Error::NegativeEntry { index, value });
        }
        let n = v.norm();
        if n == 0.0 {
            return Err(Error::ZeroPoint);
        }
        Ok(SimplexPoint(v.scale(1.0 / n)))
    }

    pub fn vector(&self) -> &Vector {
        &self.0
    }

    pub fn to_projective(&self) -> ProjectivePoint {
        ProjectivePoint::Direction(self.0.clone())
    }

    /// Reads a projective point whose representative is nonnegative.
    pub fn from_projective(p: &ProjectivePoint) -> Result<Self> {
        let v = p.representative().ok_or(Error::ZeroPoint)?;
        SimplexPoint::new(v)
    }

    /// `a·u / |a·u|` for a nonnegative matrix `a`.
    pub fn act(&self, a: &Matrix) -> Result<(SimplexPoint, f64)> {
        let y = a.mul_vec(&self.0);
        let n = y.norm();
        let p = SimplexPoint::new(&y)?;
        Ok((p, n.ln()))
    }
}

fn min_ratio(u: &Vector, v: &Vector) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..v.dim() {
        if v[i] > 0.0 {
            m = m.min(u[i] / v[i]);
        }
    }
    if m.is_finite() {
        m
    } else {
        0.0
    }
}

/// Hennion's projective metric on the nonnegative cone, in `[0, 1]`.
pub fn hennion_distance(u: &SimplexPoint, v: &SimplexPoint) -> f64 {
    let mm = min_ratio(&u.0, &v.0) * min_ratio(&v.0, &u.0);
    ((1.0 - mm) / (1.0 + mm)).clamp(0.0, 1.0)
}

/// Checks `|v| = 1` up to the library tolerance.
pub fn ensure_unit(v: &Vector) -> Result<()> {
    let n = v.norm();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::NonUnitVector(n));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_slice(x)
    }

    #[test]
    fn canonical_sign() {
        let p = canonicalize(&v(&[-1.0, 1.0]));
        let q = canonicalize(&v(&[1.0, -1.0]));
        assert_eq!(p, q);
        let r = p.representative().unwrap();
        assert!(r[0] > 0.0);
        let z = canonicalize(&v(&[0.0, -2.0]));
        assert_eq!(z, ProjectivePoint::Direction(v(&[0.0, 1.0])));
        assert_eq!(canonicalize(&v(&[0.0, 0.0])), ProjectivePoint::Zero);
    }

    #[test]
    fn orthogonal_and_equal_lines() {
        let e1 = canonicalize(&v(&[1.0, 0.0]));
        let e2 = canonicalize(&v(&[0.0, 1.0]));
        let d11 = canonicalize(&v(&[1.0, 1.0]));
        assert_eq!(delta(&e1, &e2).unwrap(), 1.0);
        assert!((delta(&e1, &d11).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(delta(&e1, &e1).unwrap(), 0.0);
        assert!(matches!(
            delta(&e1, &ProjectivePoint::Zero),
            Err(Error::ZeroPoint)
        ));
    }

    #[test]
    fn small_angles_keep_relative_accuracy() {
        let t = 1e-12f64;
        let a = canonicalize(&v(&[1.0, 0.0]));
        let b = canonicalize(&v(&[t.cos(), t.sin()]));
        let d = delta(&a, &b).unwrap();
        assert!((d - t).abs() / t < 1e-6);
    }

    #[test]
    fn kernel_direction_is_absorbed() {
        let a = Matrix::diag(&[1.0, 0.0]);
        let (p, g) = act(&a, &canonicalize(&v(&[0.0, 1.0])));
        assert_eq!(p, ProjectivePoint::Zero);
        assert_eq!(g, f64::NEG_INFINITY);
    }

    #[test]
    fn diagonal_action() {
        let a = Matrix::diag(&[2.0, 1.0]);
        let (p, g) = act(&a, &canonicalize(&v(&[1.0, 0.0])));
        assert_eq!(p, canonicalize(&v(&[1.0, 0.0])));
        assert!((g - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn hennion_examples() {
        let e1 = SimplexPoint::new(&v(&[1.0, 0.0])).unwrap();
        let e2 = SimplexPoint::new(&v(&[0.0, 1.0])).unwrap();
        let c = SimplexPoint::new(&v(&[1.0, 1.0])).unwrap();
        assert_eq!(hennion_distance(&e1, &e2), 1.0);
        assert_eq!(hennion_distance(&c, &c), 0.0);
        assert!(matches!(
            SimplexPoint::new(&v(&[1.0, -0.1])),
            Err(Error::NegativeEntry { index: 1, .. })
        ));
    }

    #[test]
    fn gain_ratio_for_rank_one() {
        let w = v(&[1.0, 0.0]);
        let wt = v(&[0.6, 0.8]);
        let a = Matrix::outer(&w, &wt);
        let x = canonicalize(&v(&[1.0, 0.0]));
        let r = norm_gain_ratio(&a, &x).unwrap();
        assert!((r - 1.0 / 0.6).abs() < 1e-14);
    }
}
