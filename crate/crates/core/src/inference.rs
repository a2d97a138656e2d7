//! Subspace metrics, alignment, community detection, and the covariance of
//! estimated score matrices.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{check_symmetric, spectral_norm, thin_svd};
use crate::rng::RngStream;
use crate::spectral::top_eigs;

/// Orthogonal `W` minimising `‖V̂ − V W‖_F`: with `VᵀV̂ = Q₁ D Q₂ᵀ`,
/// `W = Q₁ Q₂ᵀ`.
pub fn procrustes_align(vhat: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if vhat.shape() != v.shape() {
        return Err(Error::DimensionMismatch(format!(
            "cannot align a {}x{} basis to a {}x{} basis",
            vhat.nrows(),
            vhat.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    let svd = thin_svd(&(v.transpose() * vhat))?;
    Ok(&svd.u * svd.w.transpose())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionNorm {
    Frobenius,
    Spectral,
}

/// Norm of `V₁V₁ᵀ − V₂V₂ᵀ` for orthonormal bases of possibly different
/// dimension.
///
/// Computed from the residuals `(I − V₂V₂ᵀ)V₁` and `(I − V₁V₁ᵀ)V₂` rather
/// than by forming `n x n` projectors, which avoids cancellation when the
/// subspaces are close.
pub fn projection_distance(v1: &DMatrix<f64>, v2: &DMatrix<f64>, norm: ProjectionNorm) -> Result<f64> {
    if v1.nrows() != v2.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "bases have {} and {} rows",
            v1.nrows(),
            v2.nrows()
        )));
    }
    let r1 = v1 - v2 * (v2.transpose() * v1);
    let r2 = v2 - v1 * (v1.transpose() * v2);
    Ok(match norm {
        ProjectionNorm::Frobenius => (r1.norm_squared() + r2.norm_squared()).sqrt(),
        ProjectionNorm::Spectral => spectral_norm(&r1)?.max(spectral_norm(&r2)?),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    pub assignment: Vec<usize>,
    pub centroids: DMatrix<f64>,
    /// `‖Z C − X‖_F` for the returned assignment and centroids.
    pub cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Relative decrease of the objective below which Lloyd iterations stop.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            restarts: 10,
            max_iter: 300,
            tol: 1e-8,
            seed: 0,
        }
    }
}

impl KMeansOptions {
    pub fn with_seed(seed: u64) -> Self {
        KMeansOptions {
            seed,
            ..Self::default()
        }
    }
}

/// K-means on the rows of `x`: Lloyd iterations from k-means++ starts, best
/// of `opts.restarts` runs. Restart `r` draws from stream `r` of the seed, so
/// the result does not depend on how restarts are scheduled.
pub fn kmeans_cluster(x: &DMatrix<f64>, k: usize, opts: &KMeansOptions) -> Result<ClusterResult> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "number of clusters must satisfy 1 <= K <= n = {n}, got {k}"
        )));
    }
    let root = RngStream::new(opts.seed);
    let runs: Vec<ClusterResult> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| lloyd(x, k, opts, &mut root.substream(r as u64).rng()))
        .collect();
    // first minimum in restart order
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.cost < a.cost { b } else { a })
        .expect("at least one restart");
    Ok(best)
}

fn sq_dist(x: &DMatrix<f64>, u: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    (0..x.ncols()).map(|t| (x[(u, t)] - c[(j, t)]).powi(2)).sum()
}

fn nearest(x: &DMatrix<f64>, u: usize, c: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..c.nrows() {
        let d = sq_dist(x, u, c, j);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp<R: Rng + ?Sized>(x: &DMatrix<f64>, k: usize, rng: &mut R) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut c = DMatrix::zeros(k, p);
    let first = rng.random_range(0..n);
    c.row_mut(0).copy_from(&x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|u| sq_dist(x, u, &c, 0)).collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (u, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target {
                    pick = u;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        c.row_mut(j).copy_from(&x.row(pick));
        for (u, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, u, &c, j));
        }
    }
    c
}

fn lloyd<R: Rng + ?Sized>(x: &DMatrix<f64>, k: usize, opts: &KMeansOptions, rng: &mut R) -> ClusterResult {
    let (n, p) = x.shape();
    let mut c = kmeans_pp(x, k, rng);
    let mut assignment = vec![0usize; n];
    let mut prev = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let mut cost = 0.0;
        for (u, a) in assignment.iter_mut().enumerate() {
            let (j, d) = nearest(x, u, &c);
            *a = j;
            cost += d;
        }
        // update step; an empty cluster takes the point farthest from its
        // current centroid
        let mut sums = DMatrix::<f64>::zeros(k, p);
        let mut counts = vec![0usize; k];
        for (u, &a) in assignment.iter().enumerate() {
            counts[a] += 1;
            for t in 0..p {
                sums[(a, t)] += x[(u, t)];
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(x, a, &c, assignment[a]).total_cmp(&sq_dist(x, b, &c, assignment[b]))
                    })
                    .expect("n >= 1");
                counts[assignment[far]] -= 1;
                for t in 0..p {
                    sums[(assignment[far], t)] -= x[(far, t)];
                    sums[(j, t)] = x[(far, t)];
                }
                assignment[far] = j;
                counts[j] = 1;
            }
        }
        for j in 0..k {
            for t in 0..p {
                c[(j, t)] = sums[(j, t)] / counts[j] as f64;
            }
        }
        if prev - cost <= opts.tol * prev.max(f64::MIN_POSITIVE) {
            break;
        }
        prev = cost;
    }
    for (u, a) in assignment.iter_mut().enumerate() {
        *a = nearest(x, u, &c).0;
    }
    let cost = clustering_cost(x, &assignment, &c);
    ClusterResult {
        assignment,
        centroids: c,
        cost,
    }
}

/// `‖Z C − X‖_F`.
pub fn clustering_cost(x: &DMatrix<f64>, assignment: &[usize], centroids: &DMatrix<f64>) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(u, &a)| sq_dist(x, u, centroids, a))
        .sum::<f64>()
        .sqrt()
}

/// Smallest number of disagreements between two labelings over all
/// relabelings of `zhat`. Exhaustive for `K <= 8`, optimal assignment
/// otherwise.
pub fn misclustering_count(zhat: &[usize], z: &[usize], k: usize) -> Result<usize> {
    if zhat.len() != z.len() {
        return Err(Error::DimensionMismatch(format!(
            "labelings have lengths {} and {}",
            zhat.len(),
            z.len()
        )));
    }
    if let Some(&bad) = zhat.iter().chain(z).find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for K = {k}")));
    }
    let mut agree = vec![vec![0usize; k]; k];
    for (&a, &b) in zhat.iter().zip(z) {
        agree[a][b] += 1;
    }
    let matched = if k <= 8 {
        best_permutation(&agree)
    } else {
        let cost: Vec<Vec<i64>> = agree
            .iter()
            .map(|row| row.iter().map(|&c| -(c as i64)).collect())
            .collect();
        let perm = hungarian(&cost);
        perm.iter().enumerate().map(|(a, &b)| agree[a][b]).sum()
    };
    Ok(z.len() - matched)
}

fn best_permutation(agree: &[Vec<usize>]) -> usize {
    fn go(agree: &[Vec<usize>], row: usize, used: &mut [bool], acc: usize, best: &mut usize) {
        if row == agree.len() {
            *best = (*best).max(acc);
            return;
        }
        for col in 0..agree.len() {
            if !used[col] {
                used[col] = true;
                go(agree, row + 1, used, acc + agree[row][col], best);
                used[col] = false;
            }
        }
    }
    let mut best = 0;
    go(agree, 0, &mut vec![false; agree.len()], 0, &mut best);
    best
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials). Returns the column assigned to each row.
pub(crate) fn hungarian(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    const INF: i64 = i64::MAX / 4;
    // 1-based arrays; column 0 is a sentinel
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Eigenvalues of a symmetric score matrix, largest magnitude first.
pub fn estimate_eigenvalues(rhat: &DMatrix<f64>) -> Result<Vec<f64>> {
    let d = rhat.nrows();
    if d == 0 {
        return Ok(Vec::new());
    }
    Ok(top_eigs(rhat, d)?.values.iter().copied().collect())
}

/// Position of entry `(k, l)`, `k <= l`, 0-based, in the half-vectorisation:
/// columns of the upper triangle in order, i.e. `k + l(l+1)/2`.
pub fn vec_index(k: usize, l: usize) -> usize {
    debug_assert!(k <= l);
    k + l * (l + 1) / 2
}

/// Inverse of [`vec_index`].
pub fn vec_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|l| (0..=l).map(move |k| (k, l))).collect()
}

/// Upper triangle of a symmetric `d x d` matrix as a vector of length
/// `d(d+1)/2`.
pub fn vec_upper(r: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = check_symmetric(r, "score matrix")?;
    Ok(DVector::from_iterator(
        d * (d + 1) / 2,
        vec_pairs(d).into_iter().map(|(k, l)| r[(k, l)]),
    ))
}

/// Symmetric matrix from its half-vectorisation.
pub fn unvec_upper(v: &DVector<f64>, d: usize) -> Result<DMatrix<f64>> {
    if v.len() != d * (d + 1) / 2 {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} does not hold a {d}x{d} symmetric matrix",
            v.len()
        )));
    }
    let mut r = DMatrix::zeros(d, d);
    for (k, l) in vec_pairs(d) {
        r[(k, l)] = v[vec_index(k, l)];
        r[(l, k)] = v[vec_index(k, l)];
    }
    Ok(r)
}

/// Covariance of the half-vectorised score matrix `vec(Vᵀ A V)` when `A` has
/// independent Bernoulli(`P_st`) entries above the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreCovariance {
    pub sigma: DMatrix<f64>,
    pub d: usize,
}

impl ScoreCovariance {
    pub fn r(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn variance(&self, k: usize, l: usize) -> f64 {
        let i = vec_index(k.min(l), k.max(l));
        self.sigma[(i, i)]
    }
}

/// `Σ_{(kl),(k'l')} = Σ_{s<t} P_st(1−P_st) (V_sk V_tl + V_tk V_sl)(V_sk' V_tl' + V_tk' V_sl')`.
pub fn score_covariance(v: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<ScoreCovariance> {
    let (n, d) = v.shape();
    if p.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "basis has {n} rows but the probability matrix is {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    let pairs = vec_pairs(d);
    let r = pairs.len();
    // rows of F are the weighted feature vectors of each vertex pair;
    // Σ = Fᵀ F, accumulated one source vertex at a time to bound memory
    let mut sigma = DMatrix::zeros(r, r);
    let mut f = DMatrix::zeros(n, r);
    for s in 0..n {
        let rows = n - s - 1;
        if rows == 0 {
            continue;
        }
        let mut block = f.rows_mut(0, rows);
        for (row, t) in ((s + 1)..n).enumerate() {
            let w = (p[(s, t)] * (1.0 - p[(s, t)])).max(0.0).sqrt();
            for (c, &(k, l)) in pairs.iter().enumerate() {
                block[(row, c)] = w * (v[(s, k)] * v[(t, l)] + v[(t, k)] * v[(s, l)]);
            }
        }
        let block = f.rows(0, rows);
        sigma += block.transpose() * block;
    }
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    Ok(ScoreCovariance { sigma, d })
}

/// Entrywise standardisation `diag(Σ)^{-1/2} vec(W R̂ Wᵀ − R)`.
pub fn standardize_scores(
    rhat: &DMatrix<f64>,
    r_true: &DMatrix<f64>,
    w: &DMatrix<f64>,
    sigma: &ScoreCovariance,
) -> Result<DVector<f64>> {
    let d = r_true.nrows();
    if rhat.shape() != (d, d) || w.shape() != (d, d) || sigma.d != d {
        return Err(Error::DimensionMismatch(
            "score matrices, alignment and covariance must share d".into(),
        ));
    }
    let diff = vec_upper(&crate::linalg::symmetrize(&(w * rhat * w.transpose() - r_true)))?;
    let mut z = DVector::zeros(diff.len());
    for i in 0..diff.len() {
        let var = sigma.sigma[(i, i)];
        if !(var > 0.0) {
            return Err(Error::DegenerateCovariance(format!(
                "variance of coordinate {i} is {var}"
            )));
        }
        z[i] = diff[i] / var.sqrt();
    }
    Ok(z)
}
