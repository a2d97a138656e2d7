//! Small dense linear-algebra helpers shared across modules.
//!
//! Public matrices are `nalgebra::DMatrix<f64>`; eigen and singular value
//! decompositions are delegated to `faer`, which runs sequentially so results
//! do not depend on the number of worker threads.

use faer::Mat;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub(crate) fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Flip column signs so that the entry of largest magnitude in each column is
/// positive. Ties go to the lowest row index.
pub fn normalize_column_signs(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        if column_sign(m, j) < 0.0 {
            m.column_mut(j).neg_mut();
        }
    }
}

/// `+1.0` or `-1.0`: the sign of the largest-magnitude entry of column `j`.
pub(crate) fn column_sign(m: &DMatrix<f64>, j: usize) -> f64 {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for i in 0..m.nrows() {
        let v = m[(i, j)];
        if v.abs() > best {
            best = v.abs();
            sign = if v < 0.0 { -1.0 } else { 1.0 };
        }
    }
    sign
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// First index pair `(i, j)` with `|m_ij - m_ji| > tol`, scanning the upper
/// triangle row by row.
pub fn asymmetry(m: &DMatrix<f64>, tol: f64) -> Option<(usize, usize)> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return Some((i, j));
            }
        }
    }
    None
}

pub(crate) fn check_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// Symmetric tolerance used when validating matrices produced by arithmetic.
pub(crate) fn symmetry_tol(m: &DMatrix<f64>) -> f64 {
    1e-9 * max_abs(m).max(1.0)
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    let n = check_square(m, what)?;
    if let Some((i, j)) = asymmetry(m, symmetry_tol(m)) {
        return Err(Error::Asymmetric(i, j));
    }
    Ok(n)
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `max |VᵀV − I|`.
pub fn orthonormality_error(v: &DMatrix<f64>) -> f64 {
    let g = v.transpose() * v;
    let d = g.nrows();
    max_abs(&(g - DMatrix::identity(d, d)))
}

/// Thin singular value decomposition `m = U diag(s) Wᵀ` with singular values
/// in non-increasing order. Left singular vectors follow the column sign
/// convention of [`normalize_column_signs`]; right vectors are flipped along.
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub w: DMatrix<f64>,
}

pub fn thin_svd(m: &DMatrix<f64>) -> Result<ThinSvd> {
    let svd = to_faer(m)
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("svd did not converge: {e:?}")))?;
    let mut u = from_faer(svd.U());
    let mut w = from_faer(svd.V());
    let s = svd.S().column_vector();
    let singular_values = DVector::from_fn(s.nrows(), |i, _| s[i]);
    for j in 0..u.ncols() {
        if column_sign(&u, j) < 0.0 {
            u.column_mut(j).neg_mut();
            w.column_mut(j).neg_mut();
        }
    }
    Ok(ThinSvd {
        u,
        singular_values,
        w,
    })
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    let s = to_faer(m)
        .singular_values()
        .map_err(|e| Error::Numerical(format!("svd did not converge: {e:?}")))?;
    Ok(s.first().copied().unwrap_or(0.0))
}

/// Symmetric square root of a positive semidefinite matrix; negative
/// eigenvalues from round-off are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = check_square(m, "matrix")?;
    let evd = to_faer(m)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let vecs = from_faer(evd.U());
    let vals = evd.S().column_vector();
    let mut scaled = vecs.clone();
    for j in 0..n {
        let s = vals[j].max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    Ok(scaled * vecs.transpose())
}
