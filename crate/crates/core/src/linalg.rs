//! Small dense linear-algebra helpers shared by every module.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance for symmetry checks on user supplied matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    nalgebra::Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::SingularMatrix(format!("{what} is not positive definite")))
}

/// `log det` of a positive-definite matrix through its Cholesky factor.
pub fn logdet_pd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let c = cholesky(m, what)?;
    let l = c.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::SingularMatrix(format!("{what} lost positive definiteness")));
        }
        acc += d.ln();
    }
    Ok(2.0 * acc)
}

pub fn inverse_pd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(m, what)?.inverse()))
}

pub fn eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    nalgebra::SymmetricEigen::new(symmetrize(m)).eigenvalues
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).max()
}

/// Spectral condition number of a symmetric positive-definite matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let ev = eigenvalues(m);
    let lo = ev.min();
    if lo <= 0.0 {
        return f64::INFINITY;
    }
    ev.max() / lo
}

/// Symmetric matrix is positive semidefinite up to `tol` (scaled by its magnitude).
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    min_eigenvalue(m) >= -tol * m.amax().max(1.0)
}

pub fn check_square(m: &DMatrix<f64>, d: usize, what: &str) -> Result<()> {
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::ShapeMismatch(format!(
            "{what} is {}x{}, expected {d}x{d}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn check_len(v: &DVector<f64>, d: usize, what: &str) -> Result<()> {
    if v.len() != d {
        return Err(Error::ShapeMismatch(format!("{what} has length {}, expected {d}", v.len())));
    }
    Ok(())
}

/// Quadratic form `v^T M v`.
pub fn quad(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::ShapeMismatch("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
