//! Multiple adjacency spectral embedding.
//!
//! Each graph is embedded separately, the embeddings are concatenated
//! column-wise, and the leading left singular vectors of the concatenation
//! give the common basis `V̂`. Score matrices follow in closed form as
//! `R̂_i = V̂ᵀ A_i V̂`.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphio::{self, Graph, GraphCollection};
use crate::linalg::{symmetrize, thin_svd};
use crate::models::load_score_files;
use crate::spectral::{
    eigenvalue_magnitudes, elbow_dimension, scale_by_root, top_eigs, DEFAULT_MAX_CANDIDATES,
};

/// A dimension that is either given or chosen by the elbow rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dim {
    Auto,
    Fixed(usize),
}

/// Per-graph embedding dimensions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GraphDims {
    Auto,
    Uniform(usize),
    PerGraph(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaseOptions {
    pub d: Dim,
    pub d_i: GraphDims,
    /// Scale each per-graph embedding by `sqrt(|λ|)` before concatenating.
    pub scaled: bool,
    /// Leading values scanned by the elbow rule (default `min(n, 100)`).
    pub max_candidates: Option<usize>,
}

impl MaseOptions {
    pub fn new(d: Dim, d_i: GraphDims, scaled: bool) -> Self {
        MaseOptions {
            d,
            d_i,
            scaled,
            max_candidates: None,
        }
    }

    /// Fixed joint and per-graph dimensions, unscaled.
    pub fn fixed(d: usize, d_i: usize) -> Self {
        Self::new(Dim::Fixed(d), GraphDims::Uniform(d_i), false)
    }

    pub fn scaled(mut self, scaled: bool) -> Self {
        self.scaled = scaled;
        self
    }
}

impl Default for MaseOptions {
    fn default() -> Self {
        Self::new(Dim::Auto, GraphDims::Auto, false)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaseEmbedding {
    pub vhat: DMatrix<f64>,
    pub rhats: Vec<DMatrix<f64>>,
    pub d_i: Vec<usize>,
    pub d: usize,
    pub scaled: bool,
    /// Numerical rank of the concatenated embedding; below `d` the trailing
    /// columns of `vhat` are arbitrary.
    pub numerical_rank: usize,
    /// Singular values of the concatenated embedding, largest first.
    pub singular_values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DimsFile {
    d: usize,
    d_i: Vec<usize>,
    scaled: bool,
    numerical_rank: usize,
}

impl MaseEmbedding {
    pub fn n(&self) -> usize {
        self.vhat.nrows()
    }

    pub fn m(&self) -> usize {
        self.rhats.len()
    }

    /// Writes `V.csv`, `R_1.csv .. R_m.csv` and `dims.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        graphio::create_dir(dir)?;
        graphio::save_matrix(dir.join("V.csv"), &self.vhat)?;
        for (i, r) in self.rhats.iter().enumerate() {
            graphio::save_matrix(dir.join(format!("R_{}.csv", i + 1)), r)?;
        }
        graphio::write_json(
            dir.join("dims.json"),
            &DimsFile {
                d: self.d,
                d_i: self.d_i.clone(),
                scaled: self.scaled,
                numerical_rank: self.numerical_rank,
            },
        )
    }

    /// Reads an embedding written by [`MaseEmbedding::save`]. Singular values
    /// are not persisted and come back empty.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let vhat = graphio::load_matrix(dir.join("V.csv"))?;
        let rhats = load_score_files(dir)?;
        let dims: DimsFile = graphio::read_json(dir.join("dims.json"))?;
        if dims.d != vhat.ncols() || rhats.iter().any(|r| r.shape() != (dims.d, dims.d)) {
            return Err(Error::DimensionMismatch(format!(
                "embedding in {} is inconsistent with dims.json",
                dir.display()
            )));
        }
        Ok(MaseEmbedding {
            vhat,
            rhats,
            d_i: dims.d_i,
            d: dims.d,
            scaled: dims.scaled,
            numerical_rank: dims.numerical_rank,
            singular_values: Vec::new(),
        })
    }
}

pub fn mase_fit(collection: &GraphCollection, opts: &MaseOptions) -> Result<MaseEmbedding> {
    let mats: Vec<&DMatrix<f64>> = collection.graphs().iter().map(Graph::matrix).collect();
    mase_fit_matrices(&mats, opts)
}

/// [`mase_fit`] on bare symmetric matrices (adjacency or probability).
pub fn mase_fit_matrices(graphs: &[&DMatrix<f64>], opts: &MaseOptions) -> Result<MaseEmbedding> {
    let m = graphs.len();
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one graph".into()));
    }
    let n = graphs[0].nrows();
    if let Some(g) = graphs.iter().find(|g| g.shape() != (n, n)) {
        return Err(Error::MismatchedVertexCount {
            expected: n,
            found: g.nrows(),
        });
    }
    let candidates = opts.max_candidates.unwrap_or(DEFAULT_MAX_CANDIDATES.min(n));

    if let GraphDims::PerGraph(dims) = &opts.d_i {
        if dims.len() != m {
            return Err(Error::InvalidArgument(format!(
                "{} per-graph dimensions given for {m} graphs",
                dims.len()
            )));
        }
    }

    // step 1: per-graph embeddings
    let embeddings = graphs
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            let di = match &opts.d_i {
                GraphDims::Auto => auto_dim(&eigenvalue_magnitudes(a)?, candidates)?,
                GraphDims::Uniform(k) => *k,
                GraphDims::PerGraph(dims) => dims[i],
            };
            let eig = top_eigs(a, di)?;
            Ok(if opts.scaled { scale_by_root(eig) } else { eig.vectors })
        })
        .collect::<Result<Vec<_>>>()?;
    let d_i: Vec<usize> = embeddings.iter().map(DMatrix::ncols).collect();

    // step 2: concatenate
    let total: usize = d_i.iter().sum();
    let mut u = DMatrix::zeros(n, total);
    let mut col = 0;
    for e in &embeddings {
        u.columns_mut(col, e.ncols()).copy_from(e);
        col += e.ncols();
    }

    // step 3: leading left singular vectors
    let (left, singular_values) = left_singular(&u)?;
    let d = match opts.d {
        Dim::Fixed(d) => d,
        Dim::Auto => auto_dim(&singular_values, candidates)?,
    };
    if d == 0 || d > total || d > n {
        return Err(Error::InvalidArgument(format!(
            "joint dimension {d} must lie in 1..={} (sum of per-graph dimensions, capped at n)",
            total.min(n)
        )));
    }
    let smax = singular_values.first().copied().unwrap_or(0.0);
    let cutoff = smax * n.max(total) as f64 * f64::EPSILON;
    let numerical_rank = singular_values.iter().filter(|&&s| s > cutoff).count();
    if numerical_rank < d {
        log::warn!(
            "concatenated embedding has numerical rank {numerical_rank} < d = {d}; \
             trailing directions of the common basis are arbitrary"
        );
    }
    let vhat = left.columns(0, d).into_owned();

    // step 4: score matrices
    let rhats = graphs.par_iter().map(|a| score_product(&vhat, a)).collect();

    Ok(MaseEmbedding {
        vhat,
        rhats,
        d_i,
        d,
        scaled: opts.scaled,
        numerical_rank,
        singular_values,
    })
}

fn auto_dim(values: &[f64], candidates: usize) -> Result<usize> {
    if values.len() < 2 {
        return Ok(values.len().max(1));
    }
    elbow_dimension(values, Some(candidates))
}

/// Left singular vectors (sign-normalised) and singular values of `u`.
/// When `u` has more columns than rows the eigendecomposition of `UUᵀ` is
/// used instead of a thin SVD.
fn left_singular(u: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (n, k) = u.shape();
    if k > n {
        let gram = symmetrize(&(u * u.transpose()));
        let eig = top_eigs(&gram, n)?;
        let sv = eig.values.iter().map(|v| v.max(0.0).sqrt()).collect();
        Ok((eig.vectors, sv))
    } else {
        let svd = thin_svd(u)?;
        Ok((svd.u, svd.singular_values.iter().copied().collect()))
    }
}

fn score_product(vhat: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(vhat.transpose() * a * vhat))
}

/// `V̂ᵀ A V̂`.
pub fn score_matrix(vhat: &DMatrix<f64>, a: &Graph) -> Result<DMatrix<f64>> {
    if vhat.nrows() != a.n() {
        return Err(Error::DimensionMismatch(format!(
            "basis has {} rows but the graph has {} vertices",
            vhat.nrows(),
            a.n()
        )));
    }
    Ok(score_product(vhat, a.matrix()))
}

/// `V̂ R̂ V̂ᵀ`, optionally clamped to `[0, 1]`.
pub fn reconstruct_p(vhat: &DMatrix<f64>, rhat: &DMatrix<f64>, clip: bool) -> Result<DMatrix<f64>> {
    if vhat.ncols() != rhat.nrows() || rhat.nrows() != rhat.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "basis is {}x{} but score matrix is {}x{}",
            vhat.nrows(),
            vhat.ncols(),
            rhat.nrows(),
            rhat.ncols()
        )));
    }
    let p = symmetrize(&(vhat * rhat * vhat.transpose()));
    Ok(if clip { p.map(|x| x.clamp(0.0, 1.0)) } else { p })
}

/// Score matrix of a new graph in an existing embedding.
pub fn out_of_sample(embedding: &MaseEmbedding, a_new: &Graph) -> Result<DMatrix<f64>> {
    score_matrix(&embedding.vhat, a_new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, orthonormality_error};
    use crate::models::{membership_matrix, sbm_to_cosie, MultilayerSbmParams};
    use crate::GraphKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn proj(v: &DMatrix<f64>) -> DMatrix<f64> {
        v * v.transpose()
    }

    fn prob(p: DMatrix<f64>) -> Graph {
        Graph::new_unchecked(p, GraphKind::Probability)
    }

    fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        m.qr().q()
    }

    fn noiseless_pair() -> (Vec<DMatrix<f64>>, crate::CosieParams) {
        let b1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.5]);
        let b2 = DMatrix::from_row_slice(2, 2, &[0.2, 0.4, 0.4, 0.3]);
        let sbm = MultilayerSbmParams::new(vec![0, 0, 1, 1, 1, 0, 1, 0], vec![b1, b2]).unwrap();
        let c = sbm_to_cosie(&sbm).unwrap();
        ((0..2).map(|i| c.expected_matrix(i)).collect(), c)
    }

    #[test]
    fn noiseless_recovery() {
        let (ps, c) = noiseless_pair();
        let refs: Vec<_> = ps.iter().collect();
        for scaled in [false, true] {
            let e = mase_fit_matrices(&refs, &MaseOptions::fixed(2, 2).scaled(scaled)).unwrap();
            assert!((proj(&e.vhat) - proj(c.basis())).norm() <= 1e-10);
            // V̂ spans V exactly, so W = VᵀV̂ is orthogonal and R̂ = Wᵀ R W
            let w = c.basis().transpose() * &e.vhat;
            for i in 0..2 {
                let want = w.transpose() * &c.scores()[i] * &w;
                assert!((&e.rhats[i] - want).norm() <= 1e-10);
            }
            assert_eq!(e.numerical_rank, 2);
        }
    }

    #[test]
    fn identifiability_example() {
        // each connectivity matrix has rank 2 but together they span 3 blocks
        let (a, b) = (0.6, 0.2);
        let b1 = DMatrix::from_row_slice(3, 3, &[a, b, b, b, a, a, b, a, a]);
        let b2 = DMatrix::from_row_slice(3, 3, &[a, a, b, a, a, b, b, b, a]);
        let z = vec![0, 0, 1, 1, 2, 2];
        let zm = membership_matrix(&z, 3);
        let ps = [&zm * &b1 * zm.transpose(), &zm * &b2 * zm.transpose()];
        let refs: Vec<_> = ps.iter().collect();
        let e = mase_fit_matrices(&refs, &MaseOptions::fixed(3, 2)).unwrap();

        // oracle: the rank-2 projections of each P summed, top 3 eigenvectors
        let mut sum = DMatrix::zeros(6, 6);
        for p in &ps {
            let eig = p.clone().symmetric_eigen();
            let mut idx: Vec<usize> = (0..6).collect();
            idx.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()));
            for &k in &idx[..2] {
                let v = eig.eigenvectors.column(k);
                sum += &v * v.transpose();
            }
        }
        let eig = sum.symmetric_eigen();
        let mut idx: Vec<usize> = (0..6).collect();
        idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let top = DMatrix::from_fn(6, 3, |r, c| eig.eigenvectors[(r, idx[c])]);
        assert!((proj(&e.vhat) - proj(&top)).norm() < 1e-10);

        // and that subspace is the span of the community indicators
        let zq = zm.clone().qr().q();
        assert!((proj(&e.vhat) - proj(&zq)).norm() < 1e-10);
    }

    #[test]
    fn gram_route_matches_svd_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 6;
        let u = DMatrix::from_fn(n, 9, |_, _| rng.random::<f64>());
        let (l1, s1) = left_singular(&u).unwrap();
        let svd = thin_svd(&u).unwrap();
        for j in 0..n {
            assert!((s1[j] - svd.singular_values[j]).abs() < 1e-10);
        }
        for j in 0..3 {
            let a = l1.column(j);
            let b = svd.u.column(j);
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn auto_dimensions() {
        let (ps, _) = noiseless_pair();
        let refs: Vec<_> = ps.iter().collect();
        let e = mase_fit_matrices(&refs, &MaseOptions::default()).unwrap();
        // oracle: elbow of the |eigenvalues| from an independent solver
        let want: Vec<usize> = ps
            .iter()
            .map(|p| {
                let mut mags: Vec<f64> = p.clone().symmetric_eigenvalues().iter().map(|v| v.abs()).collect();
                mags.sort_by(|a, b| b.total_cmp(a));
                elbow_dimension(&mags, None).unwrap()
            })
            .collect();
        assert_eq!(e.d_i, want);
        assert_eq!(e.d, elbow_dimension(&e.singular_values, None).unwrap());
        assert_eq!(e.singular_values.len(), want.iter().sum::<usize>());
    }

    #[test]
    fn dimension_errors() {
        let (ps, _) = noiseless_pair();
        let refs: Vec<_> = ps.iter().collect();
        assert!(mase_fit_matrices(&refs, &MaseOptions::fixed(5, 2)).is_err());
        assert!(mase_fit_matrices(&refs, &MaseOptions::fixed(1, 9)).is_err());
        let small = DMatrix::zeros(3, 3);
        assert!(matches!(
            mase_fit_matrices(&[&ps[0], &small], &MaseOptions::fixed(1, 1)),
            Err(Error::MismatchedVertexCount { .. })
        ));
        let opts = MaseOptions::new(Dim::Fixed(1), GraphDims::PerGraph(vec![1]), false);
        assert!(mase_fit_matrices(&refs, &opts).is_err());
    }

    #[test]
    fn rank_deficiency_reported() {
        let (ps, _) = noiseless_pair();
        let refs = vec![&ps[0], &ps[0]];
        let e = mase_fit_matrices(&refs, &MaseOptions::fixed(3, 2)).unwrap();
        assert_eq!(e.numerical_rank, 2);
        assert_eq!(e.d, 3);
        assert!(orthonormality_error(&e.vhat) < 1e-10);
    }

    #[test]
    fn score_matrix_cases() {
        let (ps, c) = noiseless_pair();
        let r = score_matrix(c.basis(), &prob(ps[0].clone())).unwrap();
        assert!(max_abs(&(r - &c.scores()[0])) < 1e-14);

        let a = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 1., 0., 1., 0., 1., 0.]);
        let g = Graph::binary(a.clone()).unwrap();
        assert_eq!(score_matrix(&DMatrix::identity(3, 3), &g).unwrap(), a);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w0 = random_orthogonal(2, &mut rng);
        let got = score_matrix(&(c.basis() * &w0), &prob(ps[1].clone())).unwrap();
        let want = w0.transpose() * &c.scores()[1] * &w0;
        assert!(max_abs(&(got - want)) < 1e-12);

        assert!(score_matrix(&DMatrix::zeros(4, 2), &g).is_err());
    }

    #[test]
    fn reconstruct_cases() {
        let (ps, c) = noiseless_pair();
        let p = reconstruct_p(c.basis(), &c.scores()[0], false).unwrap();
        assert!(max_abs(&(p - &ps[0])) < 1e-14);
        let z = reconstruct_p(c.basis(), &DMatrix::zeros(2, 2), true).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
        let big = reconstruct_p(c.basis(), &(&c.scores()[0] * 10.0), true).unwrap();
        assert!(big.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!(reconstruct_p(c.basis(), &DMatrix::zeros(3, 3), false).is_err());
    }

    #[test]
    fn out_of_sample_cases() {
        let (ps, c) = noiseless_pair();
        let refs: Vec<_> = ps.iter().collect();
        let e = mase_fit_matrices(&refs, &MaseOptions::fixed(2, 2)).unwrap();
        let before = e.clone();
        let r = out_of_sample(&e, &prob(ps[1].clone())).unwrap();
        assert!(max_abs(&(&r - &e.rhats[1])) < 1e-14);
        assert_eq!(e, before);
        // a third graph from the same subspace
        let r3 = DMatrix::from_row_slice(2, 2, &[0.8, 0.1, 0.1, 1.2]);
        let p3 = c.basis() * &r3 * c.basis().transpose();
        let w = c.basis().transpose() * &e.vhat;
        let got = out_of_sample(&e, &prob(p3)).unwrap();
        assert!(max_abs(&(got - w.transpose() * r3 * w)) < 1e-12);
        let g = Graph::binary(DMatrix::zeros(3, 3)).unwrap();
        assert!(out_of_sample(&e, &g).is_err());
    }

    #[test]
    fn persistence_round_trip() {
        let (ps, _) = noiseless_pair();
        let refs: Vec<_> = ps.iter().collect();
        let mut e = mase_fit_matrices(&refs, &MaseOptions::fixed(2, 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        e.save(dir.path()).unwrap();
        let back = MaseEmbedding::load(dir.path()).unwrap();
        e.singular_values.clear();
        assert_eq!(back, e);
    }

    fn sampled_collection(seed: u64, n: usize, m: usize) -> Vec<DMatrix<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<usize> = (0..n).map(|u| u % 3).collect();
        let zm = membership_matrix(&z, 3);
        (0..m)
            .map(|_| {
                let mut b = DMatrix::zeros(3, 3);
                for i in 0..3 {
                    for j in i..3 {
                        let x = 0.1 + 0.5 * rng.random::<f64>();
                        b[(i, j)] = x;
                        b[(j, i)] = x;
                    }
                }
                let p = &zm * b * zm.transpose();
                crate::models::sample_adjacency(&p, &mut rng)
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn permutation_equivariance(seed in any::<u64>()) {
            let n = 30;
            let graphs = sampled_collection(seed, n, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let permuted: Vec<_> = graphs
                .iter()
                .map(|a| DMatrix::from_fn(n, n, |i, j| a[(perm[i], perm[j])]))
                .collect();
            let opts = MaseOptions::fixed(3, 3);
            let e = mase_fit_matrices(&graphs.iter().collect::<Vec<_>>(), &opts).unwrap();
            let ep = mase_fit_matrices(&permuted.iter().collect::<Vec<_>>(), &opts).unwrap();
            // pairwise score distances are identifiable and so unchanged
            for i in 0..3 {
                for j in 0..3 {
                    let d1 = (&e.rhats[i] - &e.rhats[j]).norm();
                    let d2 = (&ep.rhats[i] - &ep.rhats[j]).norm();
                    prop_assert!((d1 - d2).abs() < 1e-8, "{} vs {}", d1, d2);
                }
            }
            let p = proj(&e.vhat);
            let pp = proj(&ep.vhat);
            let back = DMatrix::from_fn(n, n, |i, j| p[(perm[i], perm[j])]);
            prop_assert!(max_abs(&(back - pp)) < 1e-8);
        }

        #[test]
        fn graph_order_invariance(seed in any::<u64>()) {
            let graphs = sampled_collection(seed, 24, 4);
            let opts = MaseOptions::fixed(3, 3);
            let e = mase_fit_matrices(&graphs.iter().collect::<Vec<_>>(), &opts).unwrap();
            let order = [2usize, 0, 3, 1];
            let shuffled: Vec<_> = order.iter().map(|&i| &graphs[i]).collect();
            let es = mase_fit_matrices(&shuffled, &opts).unwrap();
            prop_assert!(max_abs(&(proj(&e.vhat) - proj(&es.vhat))) < 1e-8);
            let w = e.vhat.transpose() * &es.vhat;
            for (k, &i) in order.iter().enumerate() {
                let want = w.transpose() * &e.rhats[i] * &w;
                prop_assert!(max_abs(&(&es.rhats[k] - want)) < 1e-8);
            }
        }

        #[test]
        fn outputs_well_formed(seed in any::<u64>(), scaled in any::<bool>()) {
            let graphs = sampled_collection(seed, 20, 3);
            let e = mase_fit_matrices(&graphs.iter().collect::<Vec<_>>(), &MaseOptions::fixed(3, 2).scaled(scaled)).unwrap();
            prop_assert!(orthonormality_error(&e.vhat) <= 1e-10);
            for r in &e.rhats {
                prop_assert!(max_abs(&(r - r.transpose())) <= 1e-12 * max_abs(r).max(1.0));
            }
        }
    }
}
