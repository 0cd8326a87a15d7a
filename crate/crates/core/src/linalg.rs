//! Small dense vectors and square matrices, singular values, and
//! log-scaled products that stay finite over millions of factors.
//!
//! Storage is inline for dimensions up to [`MAX_DIM`], so hot loops do not
//! allocate. Larger square matrices (exterior powers) spill to the heap.

use std::fmt;
use std::ops::{Index, IndexMut};

use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Largest ambient dimension supported by model specs.
pub const MAX_DIM: usize = 8;

/// Tolerance used when a vector is required to be unit length.
pub const UNIT_TOL: f64 = 1e-10;

#[derive(Clone, PartialEq)]
pub struct Vector {
    data: SmallVec<[f64; MAX_DIM]>,
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.data.iter()).finish()
    }
}

impl Vector {
    pub fn from_slice(entries: &[f64]) -> Self {
        Vector {
            data: SmallVec::from_slice(entries),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Vector {
            data: SmallVec::from_elem(0.0, dim),
        }
    }

    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = Vector::zeros(dim);
        v[i] = 1.0;
        v
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize) -> f64) -> Self {
        Vector {
            data: (0..dim).map(f).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Euclidean norm, computed with scaling so huge and tiny entries do not overflow.
    pub fn norm(&self) -> f64 {
        let amax = self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if amax == 0.0 || !amax.is_finite() {
            return amax;
        }
        if !(1e-150..=1e150).contains(&amax) {
            let s: f64 = self.data.iter().map(|x| (x / amax) * (x / amax)).sum();
            return amax * s.sqrt();
        }
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).sum()
    }

    pub fn scale(&self, c: f64) -> Vector {
        Vector {
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }

    pub fn scale_mut(&mut self, c: f64) {
        for x in self.data.iter_mut() {
            *x *= c;
        }
    }

    pub fn add(&self, other: &Vector) -> Vector {
        Vector {
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        Vector {
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// `self + c * other`
    pub fn axpy(&self, c: f64, other: &Vector) -> Vector {
        Vector {
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + c * b)
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Square matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: SmallVec<[f64; MAX_DIM * MAX_DIM]>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[f64]> = (0..self.dim).map(|i| self.row(i)).collect();
        f.debug_list().entries(rows).finish()
    }
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Matrix {
            dim,
            data: SmallVec::from_elem(0.0, dim * dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Matrix::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Matrix::zeros(entries.len());
        for (i, &x) in entries.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        Ok(Matrix {
            dim,
            data: SmallVec::from_slice(entries),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut m = Matrix::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            for (j, &x) in row.iter().enumerate() {
                m[(i, j)] = x;
            }
        }
        Ok(m)
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// `u vᵀ`
    pub fn outer(u: &Vector, v: &Vector) -> Self {
        Matrix::from_fn(u.dim(), |i, j| u[i] * v[j])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn column(&self, j: usize) -> Vector {
        Vector::from_fn(self.dim, |i| self[(i, j)])
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn mul(&self, rhs: &Matrix) -> Matrix {
        let d = self.dim;
        let mut out = Matrix::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.data[i * d + j] += a * rhs.data[k * d + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &Vector) -> Vector {
        let d = self.dim;
        Vector::from_fn(d, |i| {
            let row = &self.data[i * d..(i + 1) * d];
            let mut s = 0.0;
            for j in 0..d {
                s += row[j] * v[j];
            }
            s
        })
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            dim: self.dim,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }

    pub fn scale_mut(&mut self, c: f64) {
        for x in self.data.iter_mut() {
            *x *= c;
        }
    }

    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        Matrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(rhs.data.iter())
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.dim, |i, j| self[(j, i)])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Determinant by Gaussian elimination with partial pivoting.
    pub fn determinant(&self) -> f64 {
        let d = self.dim;
        match d {
            0 => return 1.0,
            1 => return self.data[0],
            2 => return self.data[0] * self.data[3] - self.data[1] * self.data[2],
            _ => {}
        }
        let mut a: Vec<f64> = self.data.to_vec();
        let mut det = 1.0;
        for col in 0..d {
            let mut piv = col;
            for r in col + 1..d {
                if a[r * d + col].abs() > a[piv * d + col].abs() {
                    piv = r;
                }
            }
            let p = a[piv * d + col];
            if p == 0.0 {
                return 0.0;
            }
            if piv != col {
                for j in 0..d {
                    a.swap(col * d + j, piv * d + j);
                }
                det = -det;
            }
            det *= p;
            for r in col + 1..d {
                let f = a[r * d + col] / p;
                if f != 0.0 {
                    for j in col..d {
                        a[r * d + j] -= f * a[col * d + j];
                    }
                }
            }
        }
        det
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.dim + j]
    }
}

fn two_by_two_singular_values(m: &Matrix) -> (f64, f64) {
    let (a, b, c, d) = (m.data[0], m.data[1], m.data[2], m.data[3]);
    let p = (a + d).hypot(b - c);
    let q = (a - d).hypot(b + c);
    let s1 = 0.5 * (p + q);
    if s1 == 0.0 {
        return (0.0, 0.0);
    }
    let det = (a * d - b * c).abs();
    (s1, det / s1)
}

/// Singular values in descending order (one-sided Jacobi for d > 2).
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    match m.dim {
        0 => Vec::new(),
        1 => vec![m.data[0].abs()],
        2 => {
            let (s1, s2) = two_by_two_singular_values(m);
            vec![s1, s2]
        }
        _ => jacobi_singular_values(m),
    }
}

fn jacobi_singular_values(m: &Matrix) -> Vec<f64> {
    let n = m.dim;
    let scale = m.max_abs();
    if scale == 0.0 {
        return vec![0.0; n];
    }
    // columns stored contiguously
    let mut cols: Vec<f64> = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            cols[j * n + i] = m[(i, j)] / scale;
        }
    }
    let eps = 1e-15;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    let up = cols[p * n + i];
                    let uq = cols[q * n + i];
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let up = cols[p * n + i];
                    let uq = cols[q * n + i];
                    cols[p * n + i] = c * up - s * uq;
                    cols[q * n + i] = s * up + c * uq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n)
        .map(|j| {
            let c = Vector::from_slice(&cols[j * n..(j + 1) * n]);
            c.norm() * scale
        })
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Spectral norm (largest singular value).
pub fn operator_norm(m: &Matrix) -> f64 {
    match m.dim {
        0 => 0.0,
        1 => m.data[0].abs(),
        2 => two_by_two_singular_values(m).0,
        _ => jacobi_singular_values(m)[0],
    }
}

/// Smallest column sum; meaningful for entrywise nonnegative matrices.
pub fn min_column_sum(m: &Matrix) -> Result<f64> {
    if let Some((index, &value)) = m.data.iter().enumerate().find(|(_, x)| **x < 0.0) {
        return Err(Error::NegativeEntry { index, value });
    }
    let d = m.dim;
    Ok((0..d)
        .map(|j| (0..d).map(|i| m[(i, j)]).sum::<f64>())
        .fold(f64::INFINITY, f64::min))
}

/// A matrix stored as `exp(log_scale) * factor` with `‖factor‖ = 1`.
///
/// The zero matrix is `factor = 0`, `log_scale = -inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogScaledMatrix {
    factor: Matrix,
    log_scale: f64,
}

impl LogScaledMatrix {
    pub fn identity(dim: usize) -> Self {
        LogScaledMatrix {
            factor: Matrix::identity(dim),
            log_scale: 0.0,
        }
    }

    pub fn zero(dim: usize) -> Self {
        LogScaledMatrix {
            factor: Matrix::zeros(dim),
            log_scale: f64::NEG_INFINITY,
        }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        let mut out = LogScaledMatrix {
            factor: m.clone(),
            log_scale: 0.0,
        };
        out.renormalize();
        out
    }

    fn renormalize(&mut self) {
        let nrm = operator_norm(&self.factor);
        if nrm == 0.0 || !nrm.is_normal() || self.log_scale == f64::NEG_INFINITY {
            *self = LogScaledMatrix::zero(self.factor.dim);
            return;
        }
        self.factor.scale_mut(1.0 / nrm);
        self.log_scale += nrm.ln();
    }

    pub fn dim(&self) -> usize {
        self.factor.dim
    }

    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    /// `ln‖M‖`
    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn is_zero(&self) -> bool {
        self.log_scale == f64::NEG_INFINITY
    }

    /// The represented matrix; may overflow when `log_scale` is large.
    pub fn to_matrix(&self) -> Matrix {
        if self.is_zero() {
            return Matrix::zeros(self.dim());
        }
        self.factor.scale(self.log_scale.exp())
    }

    /// `self · rhs`
    pub fn multiply(&self, rhs: &LogScaledMatrix) -> LogScaledMatrix {
        if self.is_zero() || rhs.is_zero() {
            return LogScaledMatrix::zero(self.dim());
        }
        let mut out = LogScaledMatrix {
            factor: self.factor.mul(&rhs.factor),
            log_scale: self.log_scale + rhs.log_scale,
        };
        out.renormalize();
        out
    }

    /// In place `self ← a · self`.
    pub fn left_multiply(&mut self, a: &Matrix) {
        if self.is_zero() {
            return;
        }
        self.factor = a.mul(&self.factor);
        self.renormalize();
    }

    /// In place `self ← self · a`.
    pub fn right_multiply(&mut self, a: &Matrix) {
        if self.is_zero() {
            return;
        }
        self.factor = self.factor.mul(a);
        self.renormalize();
    }

    /// Applies the product to a unit vector: returns `(ln|Mv|, Mv/|Mv|)`,
    /// or `(-inf, None)` when `Mv = 0`.
    pub fn apply(&self, v: &Vector) -> Result<(f64, Option<Vector>)> {
        if v.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.dim(),
            });
        }
        let n = v.norm();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::NonUnitVector(n));
        }
        if self.is_zero() {
            return Ok((f64::NEG_INFINITY, None));
        }
        let y = self.factor.mul_vec(v);
        let ny = y.norm();
        if ny == 0.0 || !ny.is_normal() {
            return Ok((f64::NEG_INFINITY, None));
        }
        Ok((self.log_scale + ny.ln(), Some(y.scale(1.0 / ny))))
    }
}

pub fn logscaled_from(m: &Matrix) -> LogScaledMatrix {
    LogScaledMatrix::from_matrix(m)
}

pub fn logscaled_multiply(l: &LogScaledMatrix, r: &LogScaledMatrix) -> LogScaledMatrix {
    l.multiply(r)
}

pub fn logscaled_apply(l: &LogScaledMatrix, v: &Vector) -> Result<(f64, Option<Vector>)> {
    l.apply(v)
}

/// Householder-free QR by modified Gram-Schmidt. Returns `(Q, R)` with `R`
/// upper triangular; columns of `Q` for zero pivots are left as zero.
pub fn qr_decompose(m: &Matrix) -> (Matrix, Matrix) {
    let d = m.dim;
    let mut q = Matrix::zeros(d);
    let mut r = Matrix::zeros(d);
    let mut cols: Vec<Vector> = (0..d).map(|j| m.column(j)).collect();
    for j in 0..d {
        for k in 0..j {
            let qk = q.column(k);
            let proj = qk.dot(&cols[j]);
            r[(k, j)] += proj;
            cols[j] = cols[j].axpy(-proj, &qk);
        }
        // second pass for orthogonality
        for k in 0..j {
            let qk = q.column(k);
            let proj = qk.dot(&cols[j]);
            r[(k, j)] += proj;
            cols[j] = cols[j].axpy(-proj, &qk);
        }
        let n = cols[j].norm();
        r[(j, j)] = n;
        if n > 0.0 {
            for i in 0..d {
                q[(i, j)] = cols[j][i] / n;
            }
        }
    }
    (q, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2(a: f64, b: f64, c: f64, d: f64) -> Matrix {
        Matrix::from_row_major(2, &[a, b, c, d]).unwrap()
    }

    #[test]
    fn diagonal_singular_values() {
        let m = Matrix::diag(&[3.0, -7.0, 0.5]);
        let sv = singular_values(&m);
        assert!((sv[0] - 7.0).abs() < 1e-14);
        assert!((sv[1] - 3.0).abs() < 1e-14);
        assert!((sv[2] - 0.5).abs() < 1e-14);
        assert!((operator_norm(&m) - 7.0).abs() < 1e-14);
    }

    #[test]
    fn two_by_two_rotation_has_unit_singular_values() {
        let t: f64 = 0.7;
        let r = m2(t.cos(), -t.sin(), t.sin(), t.cos());
        let sv = singular_values(&r);
        assert!((sv[0] - 1.0).abs() < 1e-15 && (sv[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn determinant_matches_known_values() {
        let m = Matrix::from_rows(&[
            vec![2.0, 0.0, 1.0],
            vec![1.0, 3.0, 2.0],
            vec![1.0, 1.0, 2.0],
        ])
        .unwrap();
        assert!((m.determinant() - 6.0).abs() < 1e-13);
        assert_eq!(m2(1.0, 2.0, 2.0, 4.0).determinant(), 0.0);
    }

    #[test]
    fn min_column_sum_rejects_negative_entries() {
        assert!(matches!(
            min_column_sum(&m2(1.0, -1.0, 0.0, 1.0)),
            Err(Error::NegativeEntry { index: 1, .. })
        ));
        assert_eq!(min_column_sum(&m2(1.0, 2.0, 3.0, 0.5)).unwrap(), 2.5);
    }

    #[test]
    fn zero_matrix_is_absorbing() {
        let z = LogScaledMatrix::from_matrix(&Matrix::zeros(2));
        assert!(z.is_zero());
        let a = LogScaledMatrix::from_matrix(&m2(1.0, 2.0, 3.0, 4.0));
        assert!(a.multiply(&z).is_zero());
        assert!(z.multiply(&a).is_zero());
        let (g, dir) = z.apply(&Vector::basis(2, 0)).unwrap();
        assert_eq!(g, f64::NEG_INFINITY);
        assert!(dir.is_none());
    }

    #[test]
    fn identity_power_stays_identity() {
        let mut p = LogScaledMatrix::identity(3);
        for _ in 0..10_000 {
            p.left_multiply(&Matrix::identity(3));
        }
        assert_eq!(p.log_scale(), 0.0);
        assert_eq!(p.factor(), &Matrix::identity(3));
    }

    #[test]
    fn scalar_power_log_scale_is_exact_sum() {
        let mut p = LogScaledMatrix::identity(2);
        let a = Matrix::identity(2).scale(2.0);
        let n = 1_000_000;
        for _ in 0..n {
            p.left_multiply(&a);
        }
        let expected = n as f64 * 2f64.ln();
        assert!((p.log_scale() - expected).abs() / expected < 1e-9);
    }

    #[test]
    fn apply_rejects_non_unit_vectors() {
        let a = LogScaledMatrix::identity(2);
        assert!(matches!(
            a.apply(&Vector::from_slice(&[2.0, 0.0])),
            Err(Error::NonUnitVector(_))
        ));
    }

    #[test]
    fn qr_reconstructs_input() {
        let m = Matrix::from_rows(&[
            vec![1.0, 2.0, 0.5],
            vec![-1.0, 0.3, 2.0],
            vec![0.2, 1.0, 1.0],
        ])
        .unwrap();
        let (q, r) = qr_decompose(&m);
        let back = q.mul(&r);
        assert!(back.sub(&m).max_abs() < 1e-13);
        let qtq = q.transpose().mul(&q);
        assert!(qtq.sub(&Matrix::identity(3)).max_abs() < 1e-14);
    }
}
