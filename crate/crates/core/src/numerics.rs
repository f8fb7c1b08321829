//! Small dense-matrix helpers for covariance algebra.
//!
//! Matrices here are tiny (state dimension around 2..10, stacked dimensions
//! up to a few dozen), so everything is dynamic `nalgebra` storage and
//! eigenvalues are computed outright rather than estimated.

use core::ops::Deref;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Dense real matrix. Column vectors are `n x 1` matrices.
pub type Matrix = DMatrix<f64>;

/// Solves refuse matrices whose condition number exceeds this.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Relative slack on the smallest eigenvalue when accepting a matrix as PSD.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// A symmetric positive semidefinite matrix.
///
/// Only [`symmetrize`] and the checked constructors build one, so the
/// wrapped matrix is exactly symmetric and passed the PSD test.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(Matrix);

impl SpdMatrix {
    /// Symmetrizes and checks `m`. Same as [`symmetrize`].
    pub fn new(m: Matrix) -> Result<Self> {
        symmetrize(&m)
    }

    /// Accepts `m` only if it is strictly positive definite, as required of
    /// any covariance that gets inverted (measurement noise in particular).
    pub fn positive_definite(m: Matrix) -> Result<Self> {
        let s = symmetrize(&m)?;
        let (min, _) = eigen_extremes(&s.0);
        if min <= 0.0 {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        Ok(s)
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix(Matrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SpdMatrix(Matrix::zeros(n, n))
    }

    /// `value * I`; `value` must be non-negative.
    pub fn scaled_identity(n: usize, value: f64) -> Result<Self> {
        symmetrize(&(Matrix::identity(n, n) * value))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        symmetrize(&Matrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        eigen_extremes(&self.0).0
    }

    pub fn max_eigenvalue(&self) -> f64 {
        eigen_extremes(&self.0).1
    }

    /// Ratio of the extreme eigenvalues; infinite when singular.
    pub fn condition_number(&self) -> f64 {
        let (min, max) = eigen_extremes(&self.0);
        if min <= 0.0 {
            return f64::INFINITY;
        }
        max / min
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Inverse of a well-conditioned matrix, symmetrized.
    pub fn inverse(&self) -> Result<SpdMatrix> {
        let n = self.dim();
        symmetrize(&spd_solve(self, &Matrix::identity(n, n))?)
    }
}

impl Deref for SpdMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.0
    }
}

impl AsRef<Matrix> for SpdMatrix {
    fn as_ref(&self) -> &Matrix {
        &self.0
    }
}

/// Solves `m * X = rhs` for a symmetric positive definite `m`.
pub fn spd_solve(m: &SpdMatrix, rhs: &Matrix) -> Result<Matrix> {
    let n = m.dim();
    if rhs.nrows() != n {
        return Err(Error::dims("spd_solve rhs", (n, rhs.ncols()), rhs.shape()));
    }
    let condition = m.condition_number();
    if condition.is_nan() || condition > CONDITION_LIMIT {
        return Err(Error::IllConditioned { condition });
    }
    let chol = m.0.clone().cholesky().ok_or(Error::IllConditioned { condition })?;
    Ok(chol.solve(rhs))
}

/// Returns `(m + m^T) / 2` after checking it is positive semidefinite.
pub fn symmetrize(m: &Matrix) -> Result<SpdMatrix> {
    if !m.is_square() {
        return Err(Error::dims("symmetrize", (m.nrows(), m.nrows()), m.shape()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "symmetrize" });
    }
    let s = (m + m.transpose()) * 0.5;
    let (min, max) = eigen_extremes(&s);
    if min < -PSD_TOLERANCE * (1.0 + max.max(0.0)) {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok(SpdMatrix(s))
}

/// Löwner order test `a <= b`, i.e. `b - a` is PSD up to a relative slack:
/// `min eig(b - a) >= -tol * (1 + max |eig(b)|)`.
pub fn loewner_leq(a: &SpdMatrix, b: &SpdMatrix, tol: f64) -> bool {
    if a.dim() != b.dim() {
        return false;
    }
    let diff = &b.0 - &a.0;
    let (min_diff, _) = eigen_extremes(&diff);
    let (b_min, b_max) = eigen_extremes(&b.0);
    let scale = b_min.abs().max(b_max.abs());
    min_diff >= -tol * (1.0 + scale)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_extremes(m: &Matrix) -> (f64, f64) {
    match m.nrows() {
        0 => (0.0, 0.0),
        1 => (m[(0, 0)], m[(0, 0)]),
        2 => {
            let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
            let mean = 0.5 * (a + d);
            let radius = libm::hypot(0.5 * (a - d), b);
            (mean - radius, mean + radius)
        }
        _ => {
            let eig = m.clone().symmetric_eigenvalues();
            eig.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
        }
    }
}

/// Column vector from a slice.
pub fn column(values: &[f64]) -> Matrix {
    Matrix::from_column_slice(values.len(), 1, values)
}

/// Largest absolute entry of `a - b`; infinite on a shape mismatch.
pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b.iter())
        .fold(0.0, |acc, (x, y)| f64::max(acc, (x - y).abs()))
}

/// Stacks `count` copies of `I_n` vertically (`count*n x n`).
pub fn stacked_identity(n: usize, count: usize) -> Matrix {
    Matrix::from_fn(n * count, n, |i, j| if i % n == j { 1.0 } else { 0.0 })
}
