//! Parameter types for the common-subspace model and multilayer blockmodels,
//! probability matrices, and Bernoulli samplers for graph populations.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphio::{self, Graph, GraphCollection, GraphKind};
use crate::linalg::{self, max_abs, orthonormality_error};
use crate::rng::RngStream;

/// Slack allowed when checking that `V R Vᵀ` is a probability matrix.
pub const PROBABILITY_TOL: f64 = 1e-8;

const ORTHONORMAL_TOL: f64 = 1e-10;
const SCORE_SYMMETRY_TOL: f64 = 1e-12;

/// Shared orthonormal basis `V` (`n x d`) and one symmetric `d x d` score
/// matrix per graph. Graph `i` has expected adjacency `V R_i Vᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct CosieParams {
    v: DMatrix<f64>,
    scores: Vec<DMatrix<f64>>,
}

impl CosieParams {
    pub fn new(v: DMatrix<f64>, scores: Vec<DMatrix<f64>>) -> Result<Self> {
        let d = v.ncols();
        if d == 0 || d > v.nrows() {
            return Err(Error::InvalidParameters(format!(
                "basis must be n x d with 1 <= d <= n, got {}x{}",
                v.nrows(),
                d
            )));
        }
        let err = orthonormality_error(&v);
        if err > ORTHONORMAL_TOL {
            return Err(Error::InvalidParameters(format!(
                "basis columns are not orthonormal (max |VᵀV - I| = {err:.3e})"
            )));
        }
        for (i, r) in scores.iter().enumerate() {
            if r.shape() != (d, d) {
                return Err(Error::InvalidParameters(format!(
                    "score matrix {i} is {}x{}, expected {d}x{d}",
                    r.nrows(),
                    r.ncols()
                )));
            }
            if linalg::asymmetry(r, SCORE_SYMMETRY_TOL * max_abs(r).max(1.0)).is_some() {
                return Err(Error::InvalidParameters(format!(
                    "score matrix {i} is not symmetric"
                )));
            }
        }
        Ok(CosieParams { v, scores })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn scores(&self) -> &[DMatrix<f64>] {
        &self.scores
    }

    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    pub fn d(&self) -> usize {
        self.v.ncols()
    }

    /// Number of graphs.
    pub fn m(&self) -> usize {
        self.scores.len()
    }

    /// `V R_i Vᵀ` without any range check.
    pub fn expected_matrix(&self, i: usize) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.v * &self.scores[i] * self.v.transpose()))
    }

    /// Checks `0 <= (V R_i Vᵀ)_uv <= 1` for every graph.
    pub fn check_probabilities(&self) -> Result<()> {
        for i in 0..self.m() {
            probability_matrix(self, i)?;
        }
        Ok(())
    }

    /// Writes `V.csv` and `R_1.csv .. R_m.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        graphio::create_dir(dir)?;
        graphio::save_matrix(dir.join("V.csv"), &self.v)?;
        for (i, r) in self.scores.iter().enumerate() {
            graphio::save_matrix(dir.join(format!("R_{}.csv", i + 1)), r)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let v = graphio::load_matrix(dir.join("V.csv"))?;
        let scores = load_score_files(dir)?;
        Self::new(v, scores)
    }
}

/// Reads `R_1.csv, R_2.csv, ...` until the first missing index.
pub(crate) fn load_score_files(dir: &Path) -> Result<Vec<DMatrix<f64>>> {
    let mut scores = Vec::new();
    loop {
        let p = dir.join(format!("R_{}.csv", scores.len() + 1));
        if !p.exists() {
            break;
        }
        scores.push(graphio::load_matrix(p)?);
    }
    Ok(scores)
}

/// Multilayer stochastic blockmodel: fixed community labels `z` (0-based,
/// values in `0..K`) and one `K x K` connectivity matrix per graph.
#[derive(Clone, Debug, PartialEq)]
pub struct MultilayerSbmParams {
    z: Vec<usize>,
    b: Vec<DMatrix<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SbmFile {
    z: Vec<usize>,
    #[serde(rename = "B")]
    b: Vec<Vec<Vec<f64>>>,
}

impl MultilayerSbmParams {
    pub fn new(z: Vec<usize>, b: Vec<DMatrix<f64>>) -> Result<Self> {
        let k = match b.first() {
            Some(b0) => b0.nrows(),
            None => return Err(Error::InvalidParameters("no connectivity matrices".into())),
        };
        for (i, bi) in b.iter().enumerate() {
            if bi.shape() != (k, k) {
                return Err(Error::InvalidParameters(format!(
                    "connectivity matrix {i} is {}x{}, expected {k}x{k}",
                    bi.nrows(),
                    bi.ncols()
                )));
            }
            if let Some((u, v)) = linalg::asymmetry(bi, 0.0) {
                return Err(Error::InvalidParameters(format!(
                    "connectivity matrix {i} is not symmetric at ({u}, {v})"
                )));
            }
            if let Some(x) = bi.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::InvalidParameters(format!(
                    "connectivity matrix {i} has entry {x} outside [0, 1]"
                )));
            }
        }
        let mut sizes = vec![0usize; k];
        for &c in &z {
            if c >= k {
                return Err(Error::InvalidParameters(format!(
                    "community label {c} out of range for K = {k}"
                )));
            }
            sizes[c] += 1;
        }
        if let Some(c) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidParameters(format!("community {c} is empty")));
        }
        Ok(MultilayerSbmParams { z, b })
    }

    pub fn assignments(&self) -> &[usize] {
        &self.z
    }

    pub fn connectivity(&self) -> &[DMatrix<f64>] {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn k(&self) -> usize {
        self.b[0].nrows()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn community_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k()];
        for &c in &self.z {
            sizes[c] += 1;
        }
        sizes
    }

    /// `Z B_i Zᵀ`.
    pub fn probability_matrix(&self, i: usize) -> DMatrix<f64> {
        let n = self.n();
        let b = &self.b[i];
        DMatrix::from_fn(n, n, |u, v| b[(self.z[u], self.z[v])])
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let f: SbmFile = graphio::read_json(path)?;
        let b = f
            .b
            .iter()
            .map(|rows| rows_to_matrix(rows))
            .collect::<Result<Vec<_>>>()?;
        Self::new(f.z, b)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = SbmFile {
            z: self.z.clone(),
            b: self.b.iter().map(matrix_to_rows).collect(),
        };
        graphio::write_json(path, &f)
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidParameters("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Mixed-membership blockmodel: row-stochastic memberships `Z` (`n x K`) and
/// connectivity `B`. Expected adjacency is `Z B Zᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct MmsbmParams {
    memberships: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl MmsbmParams {
    pub fn new(memberships: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let k = memberships.ncols();
        if b.shape() != (k, k) {
            return Err(Error::InvalidParameters(format!(
                "connectivity is {}x{}, memberships have {k} columns",
                b.nrows(),
                b.ncols()
            )));
        }
        if linalg::asymmetry(&b, 0.0).is_some() || b.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidParameters(
                "connectivity must be symmetric with entries in [0, 1]".into(),
            ));
        }
        for (u, row) in memberships.row_iter().enumerate() {
            if row.iter().any(|&x| x < 0.0) || (row.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameters(format!(
                    "membership row {u} is not a probability vector"
                )));
            }
        }
        Ok(MmsbmParams { memberships, b })
    }

    pub fn memberships(&self) -> &DMatrix<f64> {
        &self.memberships
    }

    pub fn connectivity(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn probability_matrix(&self) -> DMatrix<f64> {
        let p = &self.memberships * &self.b * self.memberships.transpose();
        linalg::symmetrize(&p).map(|x| x.clamp(0.0, 1.0))
    }
}

/// Vertex `u` of `n` goes to community `floor(u * k / n)`: contiguous,
/// equal-sized blocks when `k` divides `n`.
pub fn equal_block_assignment(n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|u| u * k / n).collect()
}

/// 0/1 membership matrix for hard labels.
pub fn membership_matrix(z: &[usize], k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(z.len(), k);
    for (u, &c) in z.iter().enumerate() {
        m[(u, c)] = 1.0;
    }
    m
}

/// Common-subspace representation of a multilayer SBM:
/// `V = Z (ZᵀZ)^{-1/2}` and `R_i = (ZᵀZ)^{1/2} B_i (ZᵀZ)^{1/2}`, so that
/// `Z B_i Zᵀ = V R_i Vᵀ` with `d = K`.
pub fn sbm_to_cosie(params: &MultilayerSbmParams) -> Result<CosieParams> {
    let k = params.k();
    let sizes = params.community_sizes();
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidParameters(format!("community {c} is empty")));
    }
    let root: Vec<f64> = sizes.iter().map(|&s| (s as f64).sqrt()).collect();
    let mut v = DMatrix::zeros(params.n(), k);
    for (u, &c) in params.assignments().iter().enumerate() {
        v[(u, c)] = 1.0 / root[c];
    }
    let scores = params
        .connectivity()
        .iter()
        .map(|b| DMatrix::from_fn(k, k, |a, c| root[a] * b[(a, c)] * root[c]))
        .collect();
    CosieParams::new(v, scores)
}

/// `P_i = V R_i Vᵀ` for graph `i` (0-based). Entries within
/// [`PROBABILITY_TOL`] of `[0, 1]` are clamped; anything further out is an
/// error. The diagonal is kept.
pub fn probability_matrix(params: &CosieParams, i: usize) -> Result<Graph> {
    if i >= params.m() {
        return Err(Error::InvalidArgument(format!(
            "graph index {i} out of range for m = {}",
            params.m()
        )));
    }
    let mut p = params.expected_matrix(i);
    for x in p.iter_mut() {
        if *x < -PROBABILITY_TOL || *x > 1.0 + PROBABILITY_TOL {
            return Err(Error::InvalidParameters(format!(
                "expected adjacency of graph {i} has entry {x} outside [0, 1]"
            )));
        }
        *x = x.clamp(0.0, 1.0);
    }
    Ok(Graph::new_unchecked(p, GraphKind::Probability))
}

/// Independent Bernoulli draws for the strict upper triangle, mirrored; the
/// diagonal is zero.
pub(crate) fn sample_adjacency<R: Rng + ?Sized>(p: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let n = p.nrows();
    let mut a = DMatrix::zeros(n, n);
    for v in 1..n {
        for u in 0..v {
            if rng.random::<f64>() < p[(u, v)] {
                a[(u, v)] = 1.0;
                a[(v, u)] = 1.0;
            }
        }
    }
    a
}

pub fn sample_graph<R: Rng + ?Sized>(p: &Graph, rng: &mut R) -> Result<Graph> {
    if p.kind() != GraphKind::Probability {
        return Err(Error::InvalidArgument(format!(
            "expected a probability matrix, got a {} graph",
            p.kind()
        )));
    }
    Ok(Graph::new_unchecked(
        sample_adjacency(p.matrix(), rng),
        GraphKind::Binary,
    ))
}

/// One graph per score matrix; graph `i` draws from `stream.substream(i)`.
pub fn sample_collection(params: &CosieParams, stream: &RngStream) -> Result<GraphCollection> {
    let graphs = (0..params.m())
        .into_par_iter()
        .map(|i| {
            let p = probability_matrix(params, i)?;
            sample_graph(&p, &mut stream.substream(i as u64).rng())
        })
        .collect::<Result<Vec<_>>>()?;
    GraphCollection::new(graphs)
}

/// Sample a graph from each expected-adjacency matrix with per-index streams.
pub fn sample_from_probabilities(
    probabilities: &[DMatrix<f64>],
    stream: &RngStream,
) -> Vec<Graph> {
    probabilities
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            Graph::new_unchecked(
                sample_adjacency(p, &mut stream.substream(i as u64).rng()),
                GraphKind::Binary,
            )
        })
        .collect()
}

/// `n x K` matrix whose rows are i.i.d. symmetric Dirichlet(`alpha`).
pub fn sample_mmsbm_membership<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "Dirichlet concentration must be positive, got {alpha}"
        )));
    }
    let mut z = DMatrix::zeros(n, k);
    if k == 1 {
        z.fill(1.0);
        return Ok(z);
    }
    let gamma = Gamma::new(alpha, 1.0).expect("shape checked above");
    let mut row = vec![0.0; k];
    for u in 0..n {
        // tiny shapes can underflow every coordinate to zero; redraw
        let total = loop {
            for x in row.iter_mut() {
                *x = gamma.sample(rng);
            }
            let s: f64 = row.iter().sum();
            if s > 0.0 && s.is_finite() {
                break s;
            }
        };
        for (c, x) in row.iter().enumerate() {
            z[(u, c)] = x / total;
        }
    }
    Ok(z)
}

/// `δ(P)`: the largest row sum (diagonal included).
pub fn delta_max_degree(p: &DMatrix<f64>) -> f64 {
    p.row_iter().map(|r| r.sum()).fold(0.0, f64::max)
}

/// `ε = sqrt( (1/m) Σ_i δ(P_i) / λ_min(R_i)² )`, with `λ_min` the eigenvalue
/// of smallest magnitude.
pub fn compute_epsilon(params: &CosieParams) -> Result<f64> {
    let mut total = 0.0;
    for (i, r) in params.scores().iter().enumerate() {
        let lambda_min = r
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |acc, x| acc.min(x.abs()));
        if lambda_min <= 1e-12 * max_abs(r).max(1.0) {
            return Err(Error::SingularScore(i));
        }
        let p = params.expected_matrix(i);
        total += delta_max_degree(&p) / (lambda_min * lambda_min);
    }
    Ok((total / params.m() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_block() -> MultilayerSbmParams {
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.5]);
        MultilayerSbmParams::new(vec![0, 0, 1, 1], vec![b]).unwrap()
    }

    #[test]
    fn sbm_map_two_blocks() {
        let c = sbm_to_cosie(&two_block()).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let want_v = DMatrix::from_row_slice(4, 2, &[s, 0., s, 0., 0., s, 0., s]);
        assert!(max_abs(&(c.basis() - want_v)) < 1e-15);
        let want_r = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        assert!(max_abs(&(&c.scores()[0] - want_r)) < 1e-15);
    }

    #[test]
    fn sbm_map_single_block_is_erdos_renyi() {
        let n = 7;
        let p = 0.3;
        let sbm = MultilayerSbmParams::new(vec![0; n], vec![DMatrix::from_element(1, 1, p)]).unwrap();
        let c = sbm_to_cosie(&sbm).unwrap();
        for u in 0..n {
            assert!((c.basis()[(u, 0)] - 1.0 / (n as f64).sqrt()).abs() < 1e-15);
        }
        assert!((c.scores()[0][(0, 0)] - n as f64 * p).abs() < 1e-12);
    }

    #[test]
    fn sbm_map_unequal_blocks_brute_force() {
        let b = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.2, 0.4]);
        let sbm = MultilayerSbmParams::new(vec![0, 1, 1, 1], vec![b.clone()]).unwrap();
        let c = sbm_to_cosie(&sbm).unwrap();
        let z = membership_matrix(sbm.assignments(), 2);
        let direct = &z * &b * z.transpose();
        let via = c.basis() * &c.scores()[0] * c.basis().transpose();
        assert!(max_abs(&(direct - via)) < 1e-12);
    }

    #[test]
    fn empty_community_rejected() {
        let b = DMatrix::from_element(3, 3, 0.2);
        assert!(MultilayerSbmParams::new(vec![0, 0, 2], vec![b]).is_err());
    }

    #[test]
    fn probability_matrix_cases() {
        let sbm = MultilayerSbmParams::new(vec![0; 4], vec![DMatrix::from_element(1, 1, 0.3)]).unwrap();
        let p = probability_matrix(&sbm_to_cosie(&sbm).unwrap(), 0).unwrap();
        assert!(p.matrix().iter().all(|x| (x - 0.3).abs() < 1e-15));

        let c = sbm_to_cosie(&two_block()).unwrap();
        let p = probability_matrix(&c, 0).unwrap();
        let z = [0, 0, 1, 1];
        let b = &two_block().connectivity()[0].clone();
        for u in 0..4 {
            for v in 0..4 {
                assert!((p.get(u, v) - b[(z[u], z[v])]).abs() < 1e-14);
            }
        }

        let v = DMatrix::from_element(1, 1, 1.0);
        let bad = CosieParams::new(v, vec![DMatrix::from_element(1, 1, 1.2)]).unwrap();
        assert!(matches!(probability_matrix(&bad, 0), Err(Error::InvalidParameters(_))));
        assert!(probability_matrix(&c, 5).is_err());
    }

    #[test]
    fn sampler_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zero = Graph::probability(DMatrix::zeros(6, 6)).unwrap();
        assert_eq!(sample_graph(&zero, &mut rng).unwrap().edge_count(), 0);
        let ones = Graph::probability(DMatrix::from_element(6, 6, 1.0)).unwrap();
        let g = sample_graph(&ones, &mut rng).unwrap();
        assert_eq!(g.edge_count(), 15);
        assert_eq!(g.kind(), GraphKind::Binary);
        assert!((0..6).all(|u| g.get(u, u) == 0.0));
        let binary = Graph::binary(DMatrix::zeros(2, 2)).unwrap();
        assert!(sample_graph(&binary, &mut rng).is_err());
    }

    #[test]
    fn sampler_edge_frequency() {
        // Monte Carlo oracle: each entry's empirical frequency over N draws
        // lies within 3 standard errors of p.
        let n = 50;
        let p = 0.3;
        let reps = 10_000;
        let pm = Graph::probability(DMatrix::from_element(n, n, p)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = DMatrix::<f64>::zeros(n, n);
        for _ in 0..reps {
            counts += sample_graph(&pm, &mut rng).unwrap().matrix();
        }
        let band = 3.0 * (p * (1.0 - p) / reps as f64).sqrt();
        let mut outside = 0;
        for u in 0..n {
            for v in (u + 1)..n {
                if (counts[(u, v)] / reps as f64 - p).abs() > band {
                    outside += 1;
                }
            }
        }
        // 1225 entries at 3 sigma: about 3 expected outside
        assert!(outside <= 12, "{outside} entries outside the band");
        let mean = counts.sum() / (reps * n * (n - 1)) as f64;
        assert!((mean - p).abs() < 3.0 * (p * (1.0 - p) / (reps * n * (n - 1) / 2) as f64).sqrt());
    }

    #[test]
    fn collection_reproducible_and_stream_dependent() {
        let sbm = MultilayerSbmParams::new(vec![0; 10], vec![DMatrix::from_element(1, 1, 0.5); 2]).unwrap();
        let c = sbm_to_cosie(&sbm).unwrap();
        let s = RngStream::new(9);
        let a = sample_collection(&c, &s).unwrap();
        assert_eq!((a.len(), a.n()), (2, 10));
        assert_eq!(a, sample_collection(&c, &s).unwrap());
        let x = sample_collection(&c, &s.substream(1)).unwrap();
        let y = sample_collection(&c, &s.substream(2)).unwrap();
        assert_ne!(x, y);
        assert_ne!(a.graphs()[0], a.graphs()[1]);
    }

    #[test]
    fn dirichlet_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = sample_mmsbm_membership(1000, 3, 0.1, &mut rng).unwrap();
        for row in z.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
        let one = sample_mmsbm_membership(5, 1, 0.1, &mut rng).unwrap();
        assert!(one.iter().all(|&x| x == 1.0));
        assert!(sample_mmsbm_membership(5, 3, 0.0, &mut rng).is_err());
        assert!(sample_mmsbm_membership(5, 0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn dirichlet_moments() {
        // Var(Z_uc) = (1/K)(1 - 1/K) / (K alpha + 1) for a symmetric Dirichlet
        let k = 3;
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut last = f64::INFINITY;
        for alpha in [0.1, 1.0, 10.0] {
            let z = sample_mmsbm_membership(n, k, alpha, &mut rng).unwrap();
            let col: DVector<f64> = z.column(0).into_owned();
            let mean = col.mean();
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let kf = k as f64;
            let want = (1.0 / kf) * (1.0 - 1.0 / kf) / (kf * alpha + 1.0);
            assert!((mean - 1.0 / kf).abs() < 0.01, "alpha {alpha}: mean {mean}");
            assert!((var - want).abs() < 0.05 * want, "alpha {alpha}: var {var} vs {want}");
            assert!(var < last);
            last = var;
        }
    }

    #[test]
    fn delta_cases() {
        assert_eq!(delta_max_degree(&DMatrix::from_element(100, 100, 0.5)), 50.0);
        assert_eq!(delta_max_degree(&DMatrix::zeros(4, 4)), 0.0);
        let mut m = DMatrix::zeros(5, 5);
        m.row_mut(2).fill(1.0);
        assert_eq!(delta_max_degree(&m), 5.0);
    }

    fn erdos_renyi(n: usize, p: f64, m: usize) -> CosieParams {
        let sbm = MultilayerSbmParams::new(vec![0; n], vec![DMatrix::from_element(1, 1, p); m]).unwrap();
        sbm_to_cosie(&sbm).unwrap()
    }

    #[test]
    fn epsilon_erdos_renyi() {
        // δ = p n = 50 by row sums, λ_min(R) = p n = 50: ε = sqrt(50 / 50²)
        let eps = compute_epsilon(&erdos_renyi(100, 0.5, 1)).unwrap();
        assert!((eps - (1.0f64 / 50.0).sqrt()).abs() < 1e-12, "{eps}");
        let eps4 = compute_epsilon(&erdos_renyi(100, 0.5, 4)).unwrap();
        assert!((eps4 - eps).abs() < 1e-12);
    }

    #[test]
    fn epsilon_singular() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let r = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]);
        let c = CosieParams::new(v, vec![r]).unwrap();
        assert!(matches!(compute_epsilon(&c), Err(Error::SingularScore(0))));
    }

    #[test]
    fn cosie_params_validation() {
        let v = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(CosieParams::new(v, vec![DMatrix::zeros(1, 1)]).is_err());
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let asym = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.1]);
        assert!(CosieParams::new(v, vec![asym]).is_err());
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = sbm_to_cosie(&two_block()).unwrap();
        c.save(dir.path().join("params")).unwrap();
        assert_eq!(CosieParams::load(dir.path().join("params")).unwrap(), c);

        let sbm = two_block();
        let p = dir.path().join("sbm.json");
        sbm.save_json(&p).unwrap();
        assert_eq!(MultilayerSbmParams::load_json(&p).unwrap(), sbm);
    }

    #[test]
    fn mmsbm_pure_memberships_match_sbm() {
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.5]);
        let z = membership_matrix(&[0, 0, 1, 1], 2);
        let mm = MmsbmParams::new(z, b).unwrap();
        assert_eq!(mm.probability_matrix(), two_block().probability_matrix(0));
    }

    fn arb_sbm() -> impl Strategy<Value = MultilayerSbmParams> {
        (1usize..=5, 0usize..=195, 1usize..=3, any::<u64>()).prop_map(|(k, extra, m, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = k + extra;
            // every community gets at least one vertex
            let mut z: Vec<usize> = (0..k).collect();
            z.extend((0..extra).map(|_| rng.random_range(0..k)));
            let b = (0..m)
                .map(|_| {
                    let mut b = DMatrix::zeros(k, k);
                    for a in 0..k {
                        for c in a..k {
                            let x = rng.random::<f64>();
                            b[(a, c)] = x;
                            b[(c, a)] = x;
                        }
                    }
                    b
                })
                .collect();
            let _ = n;
            MultilayerSbmParams::new(z, b).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn sbm_map_reproduces_block_probabilities(sbm in arb_sbm()) {
            let c = sbm_to_cosie(&sbm).unwrap();
            prop_assert!(orthonormality_error(c.basis()) <= 1e-10);
            for i in 0..sbm.m() {
                let err = max_abs(&(sbm.probability_matrix(i) - c.expected_matrix(i)));
                prop_assert!(err <= 1e-12, "graph {}: {}", i, err);
            }
        }
    }
}
