//! Comparison embeddings: ASE of the mean adjacency matrix and the omnibus
//! embedding.
//!
//! The omnibus matrix `M` has `(i, j)` block `(A_i + A_j)/2`. Stacking the
//! graphs as `a = [A_1; …; A_m]` and writing `E = 𝟙_m ⊗ I_n` gives
//! `M = ½(a Eᵀ + E aᵀ) = C K Cᵀ` with `C = [E, a]` and `K = ½[[0, I], [I, 0]]`.
//! The non-zero spectrum of `M` is therefore that of a `2n x 2n` problem,
//! which [`omni_embed`] solves instead of forming `M` when `m > 2`.
//! [`omnibus_matrix`] and [`omni_embed_dense`] build `M` explicitly.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graphio::{Graph, GraphCollection};
use crate::linalg::{from_faer, normalize_column_signs, symmetrize, to_faer};
use crate::spectral::{ase_matrix, top_eigs};

/// Default cap on the order `m·n` of an explicitly assembled omnibus matrix.
pub const DEFAULT_OMNIBUS_CAP: usize = 8192;

/// Per-graph latent positions from the omnibus embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct OmniEmbedding {
    pub positions: Vec<DMatrix<f64>>,
}

impl OmniEmbedding {
    pub fn m(&self) -> usize {
        self.positions.len()
    }

    pub fn d(&self) -> usize {
        self.positions.first().map_or(0, DMatrix::ncols)
    }

    /// `‖X_i − X_j‖²_F`.
    pub fn squared_distance(&self, i: usize, j: usize) -> f64 {
        (&self.positions[i] - &self.positions[j]).norm_squared()
    }
}

fn matrices(collection: &GraphCollection) -> Vec<&DMatrix<f64>> {
    collection.graphs().iter().map(Graph::matrix).collect()
}

/// Unscaled ASE of the mean adjacency matrix.
pub fn mean_ase(collection: &GraphCollection, d: usize) -> Result<DMatrix<f64>> {
    mean_ase_matrices(&matrices(collection), d)
}

pub fn mean_ase_matrices(graphs: &[&DMatrix<f64>], d: usize) -> Result<DMatrix<f64>> {
    let (first, rest) = graphs
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("need at least one graph".into()))?;
    let mut mean = (*first).clone();
    for g in rest {
        if g.shape() != mean.shape() {
            return Err(Error::MismatchedVertexCount {
                expected: mean.nrows(),
                found: g.nrows(),
            });
        }
        mean += *g;
    }
    mean /= graphs.len() as f64;
    ase_matrix(&mean, d, false)
}

/// The `mn x mn` omnibus matrix; errors when `mn` exceeds `cap`.
pub fn omnibus_matrix(collection: &GraphCollection, cap: usize) -> Result<DMatrix<f64>> {
    omnibus_from(&matrices(collection), cap)
}

fn omnibus_from(graphs: &[&DMatrix<f64>], cap: usize) -> Result<DMatrix<f64>> {
    let n = check_graphs(graphs)?;
    let m = graphs.len();
    let order = m * n;
    if order > cap {
        return Err(Error::OmnibusTooLarge { order, cap });
    }
    let mut omni = DMatrix::zeros(order, order);
    for i in 0..m {
        for j in 0..m {
            let block = if i == j {
                graphs[i].clone()
            } else {
                (graphs[i] + graphs[j]) * 0.5
            };
            omni.view_mut((i * n, j * n), (n, n)).copy_from(&block);
        }
    }
    Ok(omni)
}

fn check_graphs(graphs: &[&DMatrix<f64>]) -> Result<usize> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one graph".into()))?;
    let n = first.nrows();
    for g in graphs {
        if g.shape() != (n, n) {
            return Err(Error::MismatchedVertexCount {
                expected: n,
                found: g.nrows(),
            });
        }
    }
    Ok(n)
}

fn split_positions(x: &DMatrix<f64>, m: usize, n: usize) -> OmniEmbedding {
    OmniEmbedding {
        positions: (0..m).map(|i| x.rows(i * n, n).into_owned()).collect(),
    }
}

/// Scaled ASE of the explicitly assembled omnibus matrix.
pub fn omni_embed_dense(collection: &GraphCollection, d: usize, cap: usize) -> Result<OmniEmbedding> {
    omni_dense_matrices(&matrices(collection), d, cap)
}

fn omni_dense_matrices(graphs: &[&DMatrix<f64>], d: usize, cap: usize) -> Result<OmniEmbedding> {
    let omni = omnibus_from(graphs, cap)?;
    let x = ase_matrix(&omni, d, true)?;
    Ok(split_positions(&x, graphs.len(), graphs[0].nrows()))
}

/// Omnibus embedding into `d` dimensions: block `i` of the scaled ASE of
/// the omnibus matrix. Eigenvectors follow the column sign convention over
/// the full stacked vector.
pub fn omni_embed(collection: &GraphCollection, d: usize) -> Result<OmniEmbedding> {
    omni_embed_matrices(&matrices(collection), d)
}

pub fn omni_embed_matrices(graphs: &[&DMatrix<f64>], d: usize) -> Result<OmniEmbedding> {
    let n = check_graphs(graphs)?;
    if graphs.len() <= 2 {
        // the factored problem would be as large as M itself
        return omni_dense_matrices(graphs, d, usize::MAX);
    }
    omni_factored(graphs, d, n)
}

fn omni_factored(graphs: &[&DMatrix<f64>], d: usize, n: usize) -> Result<OmniEmbedding> {
    let m = graphs.len();
    if d == 0 || d > m * n {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension must satisfy 1 <= d <= mn = {}, got {d}",
            m * n
        )));
    }
    // G = CᵀC = [[mI, S], [S, Q]] with S = ΣA_i and Q = ΣA_i²
    let mut s = DMatrix::zeros(n, n);
    let mut q = DMatrix::zeros(n, n);
    for a in graphs {
        s += *a;
        q.gemm(1.0, a, a, 1.0);
    }
    let mut g = DMatrix::zeros(2 * n, 2 * n);
    g.view_mut((0, 0), (n, n)).fill_diagonal(m as f64);
    g.view_mut((0, n), (n, n)).copy_from(&s);
    g.view_mut((n, 0), (n, n)).copy_from(&s);
    g.view_mut((n, n), (n, n)).copy_from(&symmetrize(&q));

    // C = Ũ Λ^{1/2} Uᵀ on the range of C
    let evd = to_faer(&g)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let lambda: Vec<f64> = evd.S().column_vector().iter().copied().collect();
    let u = from_faer(evd.U());
    let lmax = lambda.iter().fold(0.0f64, |a, &v| a.max(v));
    let keep: Vec<usize> = (0..2 * n)
        .filter(|&i| lambda[i] > lmax * 2.0 * n as f64 * f64::EPSILON)
        .collect();
    let r = keep.len();
    if d > r {
        return Err(Error::InvalidArgument(format!(
            "omnibus matrix has rank at most {r}, cannot embed into {d} dimensions"
        )));
    }
    let u_r = DMatrix::from_fn(2 * n, r, |row, j| u[(row, keep[j])]);
    let root = DMatrix::from_fn(r, r, |i, j| if i == j { lambda[keep[i]].sqrt() } else { 0.0 });

    // T = Λ^{1/2} Uᵀ K U Λ^{1/2}; K swaps the two halves and halves them
    let mut ku = DMatrix::zeros(2 * n, r);
    ku.rows_mut(0, n).copy_from(&(u_r.rows(n, n) * 0.5));
    ku.rows_mut(n, n).copy_from(&(u_r.rows(0, n) * 0.5));
    let t = symmetrize(&(&root * u_r.transpose() * ku * &root));
    let eig = top_eigs(&t, d)?;

    // eigenvectors of M are C U Λ^{-1/2} W; block i is F1 + A_i F2
    let inv_root = DMatrix::from_fn(r, r, |i, j| if i == j { 1.0 / lambda[keep[i]].sqrt() } else { 0.0 });
    let f = u_r * inv_root * &eig.vectors;
    let f1 = f.rows(0, n);
    let f2 = f.rows(n, n);
    let mut x = DMatrix::zeros(m * n, d);
    for (i, a) in graphs.iter().enumerate() {
        let mut block = x.rows_mut(i * n, n);
        block.copy_from(&f1);
        block.gemm(1.0, a, &f2, 1.0);
    }
    normalize_column_signs(&mut x);
    for (j, v) in eig.values.iter().enumerate() {
        x.column_mut(j).scale_mut(v.abs().sqrt());
    }
    Ok(split_positions(&x, m, n))
}
