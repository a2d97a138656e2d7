//! Truncated symmetric eigendecomposition, adjacency spectral embedding and
//! elbow-based dimension selection.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graphio::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{check_symmetric, from_faer, normalize_column_signs, symmetrize, to_faer};

/// Leading eigenpairs of a symmetric matrix, ordered by decreasing magnitude
/// of the eigenvalue.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenPairs {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenPairs {
    pub fn d(&self) -> usize {
        self.values.len()
    }

    /// `V diag(values) Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, &v) in self.values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(v);
        }
        scaled * self.vectors.transpose()
    }
}

/// The `d` eigenpairs of largest eigenvalue magnitude of the symmetric matrix
/// `s`. Eigenvectors follow the column sign convention of
/// [`normalize_column_signs`].
pub fn top_eigs(s: &DMatrix<f64>, d: usize) -> Result<EigenPairs> {
    let n = check_symmetric(s, "matrix")?;
    if d == 0 || d > n {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension must satisfy 1 <= d <= n = {n}, got {d}"
        )));
    }
    if let Some(pairs) = krylov_top_eigs(s, d)? {
        return Ok(pairs);
    }
    dense_top_eigs(s, d)
}

fn dense_top_eigs(s: &DMatrix<f64>, d: usize) -> Result<EigenPairs> {
    let n = s.nrows();
    let evd = to_faer(s)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let all = evd.S().column_vector();
    let u = evd.U();

    // eigenvalues arrive in ascending order: the largest magnitudes sit at
    // the two ends
    let order = magnitude_order(&(0..n).map(|i| all[i]).collect::<Vec<_>>(), d);
    let values = DVector::from_iterator(d, order.iter().map(|&i| all[i]));
    let mut vectors = DMatrix::from_fn(n, d, |r, j| u[(r, order[j])]);
    normalize_column_signs(&mut vectors);
    Ok(EigenPairs { values, vectors })
}

const KRYLOV_OVERSAMPLING: usize = 3;
const KRYLOV_TOL: f64 = 1e-11;
/// Below this order the dense solver is as fast.
const KRYLOV_MIN_ORDER: usize = 200;
const KRYLOV_SEED: u64 = 0x6b72_796c_6f76;

/// Block Krylov iteration with full reorthogonalisation and Rayleigh–Ritz
/// extraction. Returns `None` when the problem is too small to benefit or
/// the basis grows past `n / 2` before the wanted pairs converge, in which
/// case the caller falls back to the dense solver.
///
/// The block is wider than `d`, so eigenvalues of multiplicity up to the
/// block width are resolved. The start block comes from a fixed seed, so the
/// result is a deterministic function of `s`.
fn krylov_top_eigs(s: &DMatrix<f64>, d: usize) -> Result<Option<EigenPairs>> {
    let n = s.nrows();
    let b = d + KRYLOV_OVERSAMPLING;
    if n < KRYLOV_MIN_ORDER || 3 * b > n {
        return Ok(None);
    }
    let cap = (n / 2).max(b);
    let mut rng = ChaCha8Rng::seed_from_u64(KRYLOV_SEED);
    let mut q = DMatrix::<f64>::zeros(n, cap);
    let mut aq = DMatrix::<f64>::zeros(n, cap);
    let mut h = DMatrix::<f64>::zeros(cap, cap);
    let mut block = DMatrix::from_fn(n, b, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut k = 0;
    let mut blocks = 0;
    let mut next_check = 2;
    let mut last_check: Option<(usize, f64)> = None;
    while k + b <= cap {
        let fresh = orthonormal_extension(q.columns(0, k), block, &mut rng);
        let product = s * &fresh;
        q.columns_mut(k, b).copy_from(&fresh);
        aq.columns_mut(k, b).copy_from(&product);
        // new columns of the projected matrix Qᵀ S Q
        let coupling = q.columns(0, k + b).tr_mul(&product);
        h.view_mut((0, k), (k + b, b)).copy_from(&coupling);
        h.view_mut((k, 0), (b, k + b)).copy_from(&coupling.transpose());
        k += b;
        blocks += 1;

        // Rayleigh–Ritz is the expensive step, so the next check is placed
        // where the observed geometric convergence rate predicts success
        if blocks >= next_check || k + b > cap {
            let hk = symmetrize(&h.view((0, 0), (k, k)).into_owned());
            let evd = to_faer(&hk)
                .self_adjoint_eigen(faer::Side::Lower)
                .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
            let theta: Vec<f64> = evd.S().column_vector().iter().copied().collect();
            let y = evd.U();
            let scale = theta.iter().fold(0.0f64, |acc, t| acc.max(t.abs()));
            let order = magnitude_order(&theta, d);
            let ys = DMatrix::from_fn(k, d, |r, j| y[(r, order[j])]);
            let values = DVector::from_iterator(d, order.iter().map(|&i| theta[i]));
            let mut vectors = q.columns(0, k) * &ys;
            let mut residual = aq.columns(0, k) * &ys;
            for j in 0..d {
                residual.column_mut(j).axpy(-values[j], &vectors.column(j), 1.0);
            }
            let worst = (0..d)
                .map(|j| residual.column(j).norm())
                .fold(0.0f64, f64::max)
                / scale.max(f64::MIN_POSITIVE);
            if worst <= KRYLOV_TOL {
                normalize_column_signs(&mut vectors);
                return Ok(Some(EigenPairs { values, vectors }));
            }
            let mut step = 2;
            if let Some((prev_blocks, prev_worst)) = last_check {
                let rate = (worst / prev_worst).powf(1.0 / (blocks - prev_blocks) as f64);
                if rate < 0.9 {
                    let needed = ((KRYLOV_TOL / worst).ln() / rate.ln()).ceil() as usize;
                    step = needed.clamp(1, blocks);
                }
            }
            last_check = Some((blocks, worst));
            next_check = blocks + step;
        }
        block = product;
    }
    Ok(None)
}

/// Orthonormalise `block` against the columns of `q` and within itself
/// (two passes of Gram–Schmidt). Columns that vanish are replaced by random
/// directions, which keeps the iteration going past invariant subspaces.
fn orthonormal_extension(
    q: nalgebra::DMatrixView<'_, f64>,
    mut block: DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let n = block.nrows();
    let project_out = |m: &mut DMatrix<f64>| {
        if q.ncols() > 0 {
            for _ in 0..2 {
                let coef = q.tr_mul(m);
                m.gemm(-1.0, &q, &coef, 1.0);
            }
        }
    };
    let norms: Vec<f64> = block.column_iter().map(|c| c.norm()).collect();
    project_out(&mut block);
    for j in 0..block.ncols() {
        let mut before = norms[j];
        let mut attempts = 0;
        loop {
            let mut col = block.column(j).into_owned();
            for _ in 0..2 {
                for i in 0..j {
                    let c = block.column(i).dot(&col);
                    col.axpy(-c, &block.column(i), 1.0);
                }
            }
            let after = col.norm();
            if after > 1e-10 * before && after > 0.0 {
                block.set_column(j, &(col / after));
                break;
            }
            attempts += 1;
            assert!(attempts < 100, "cannot extend an orthonormal basis of dimension {n}");
            let mut fresh = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
            before = fresh.norm();
            project_out(&mut fresh);
            block.set_column(j, &fresh.column(0));
        }
    }
    block
}

/// Indices of the `d` largest-magnitude entries of an ascending sequence.
/// On equal magnitude the positive value comes first.
fn magnitude_order(ascending: &[f64], d: usize) -> Vec<usize> {
    let (mut lo, mut hi) = (0usize, ascending.len());
    let mut out = Vec::with_capacity(d);
    while out.len() < d {
        if ascending[hi - 1].abs() >= ascending[lo].abs() {
            hi -= 1;
            out.push(hi);
        } else {
            out.push(lo);
            lo += 1;
        }
    }
    out
}

/// All eigenvalue magnitudes of the symmetric matrix `s`, largest first.
pub fn eigenvalue_magnitudes(s: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_symmetric(s, "matrix")?;
    let vals = to_faer(s)
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let mut mags: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    Ok(mags)
}

/// Full eigendecomposition of a symmetric matrix with eigenvalues in
/// descending (signed) order.
pub(crate) fn symmetric_eigen_desc(s: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = s.nrows();
    let evd = to_faer(s)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let vals = evd.S().column_vector();
    let u = from_faer(evd.U());
    let values = (0..n).rev().map(|i| vals[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, j| u[(r, n - 1 - j)]);
    Ok((values, vectors))
}

/// Adjacency spectral embedding of `a` into `d` dimensions. The unscaled
/// embedding is the matrix of leading eigenvectors; the scaled one multiplies
/// column `j` by `sqrt(|λ_j|)`.
pub fn ase(a: &Graph, d: usize, scaled: bool) -> Result<DMatrix<f64>> {
    ase_matrix(a.matrix(), d, scaled)
}

pub(crate) fn ase_matrix(a: &DMatrix<f64>, d: usize, scaled: bool) -> Result<DMatrix<f64>> {
    let eig = top_eigs(a, d)?;
    Ok(if scaled { scale_by_root(eig) } else { eig.vectors })
}

pub(crate) fn scale_by_root(eig: EigenPairs) -> DMatrix<f64> {
    let mut x = eig.vectors;
    for (j, v) in eig.values.iter().enumerate() {
        x.column_mut(j).scale_mut(v.abs().sqrt());
    }
    x
}

/// Default number of leading values scanned by [`elbow_dimension`].
pub const DEFAULT_MAX_CANDIDATES: usize = 100;

const ELBOW_VARIANCE_FLOOR: f64 = 1e-12;

/// Profile-likelihood elbow of Zhu and Ghodsi.
///
/// Each split `q` (1-based count of values in the leading group) models the
/// two groups as Gaussians with their own means and a pooled variance.
/// Returns the split with the largest profile log-likelihood; ties go to the
/// smallest `q`. At most `max_candidates` leading values are scanned
/// (default `min(len, 100)`).
pub fn elbow_dimension(values: &[f64], max_candidates: Option<usize>) -> Result<usize> {
    let limit = max_candidates.unwrap_or(DEFAULT_MAX_CANDIDATES).min(values.len());
    let x = &values[..limit];
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "elbow selection needs at least 2 values, got {}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("elbow input contains non-finite values".into()));
    }
    if x.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("elbow input must be non-increasing".into()));
    }

    let len = x.len() as f64;
    let mut best_q = 1;
    let mut best_ll = profile_log_likelihood(&x[..1], &x[1..], len);
    for q in 2..x.len() {
        let ll = profile_log_likelihood(&x[..q], &x[q..], len);
        // relative slack so that scaling the input cannot flip near-ties
        if ll > best_ll + 1e-9 * best_ll.abs().max(1.0) {
            best_ll = ll;
            best_q = q;
        }
    }
    Ok(best_q)
}

fn profile_log_likelihood(head: &[f64], tail: &[f64], len: f64) -> f64 {
    let ss = |g: &[f64]| {
        let mu = g.iter().sum::<f64>() / g.len() as f64;
        g.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>()
    };
    let var = ((ss(head) + ss(tail)) / len).max(ELBOW_VARIANCE_FLOOR);
    // log-likelihood at the MLE: the residual term is len/2 exactly except
    // when the floor is active
    let resid = (ss(head) + ss(tail)) / (2.0 * var);
    -0.5 * len * (2.0 * std::f64::consts::PI * var).ln() - resid
}
