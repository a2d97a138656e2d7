//! Two-sample tests of `H0: R1 = R2` between a pair of graphs.
//!
//! The statistic is `‖R̂1 − R̂2‖²_F` for the score matrices of a joint MASE
//! fit of the two graphs. Its null distribution is approximated in one of
//! three ways:
//!
//! * [`bootstrap_test`]: graphs are resampled from low-rank estimates of the
//!   two probability matrices and the embedding is refitted per replicate;
//! * [`asymptotic_test`]: Monte Carlo draws of the generalised chi-square
//!   limit built from the estimated score covariance;
//! * [`exact_mc_test`]: like the bootstrap, but resampling from known
//!   probability matrices.
//!
//! All resampling is driven by [`RngStream`] substreams indexed by replicate,
//! so p-values do not depend on the number of worker threads.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphio::{Graph, GraphCollection};
use crate::inference::{score_covariance, vec_pairs, ScoreCovariance};
use crate::linalg::{psd_sqrt, symmetrize};
use crate::mase::{mase_fit_matrices, reconstruct_p, MaseOptions};
use crate::models::sample_adjacency;
use crate::rng::RngStream;
use crate::spectral::top_eigs;

/// Default number of bootstrap pairs (half from each estimated model).
pub const DEFAULT_BOOTSTRAP_REPS: usize = 1000;

/// Monte Carlo draws are generated in chunks with one substream per chunk.
const MC_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Bootstrap,
    Asymptotic,
    ExactMc,
}

impl TestMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            TestMethod::Bootstrap => "bootstrap",
            TestMethod::Asymptotic => "asymptotic",
            TestMethod::ExactMc => "exact_mc",
        }
    }
}

impl fmt::Display for TestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bootstrap" => Ok(TestMethod::Bootstrap),
            "asymptotic" => Ok(TestMethod::Asymptotic),
            "exact_mc" | "exact-mc" => Ok(TestMethod::ExactMc),
            other => Err(Error::InvalidArgument(format!("unknown test method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
    /// Number of null draws behind the p-value.
    pub replicates: usize,
    pub d_used: usize,
}

/// `‖R1 − R2‖²_F`.
pub fn pairwise_statistic(r1: &DMatrix<f64>, r2: &DMatrix<f64>) -> Result<f64> {
    if r1.shape() != r2.shape() {
        return Err(Error::DimensionMismatch(format!(
            "score matrices are {}x{} and {}x{}",
            r1.nrows(),
            r1.ncols(),
            r2.nrows(),
            r2.ncols()
        )));
    }
    Ok((r1 - r2).norm_squared())
}

fn check_pair(a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> Result<()> {
    if a1.shape() != a2.shape() {
        return Err(Error::MismatchedVertexCount {
            expected: a1.nrows(),
            found: a2.nrows(),
        });
    }
    Ok(())
}

/// Statistic of a joint MASE fit (unscaled, dimensions `d` and `d_i`).
pub fn mase_pair_statistic(a1: &DMatrix<f64>, a2: &DMatrix<f64>, d: usize, d_i: usize) -> Result<f64> {
    check_pair(a1, a2)?;
    let fit = mase_fit_matrices(&[a1, a2], &MaseOptions::fixed(d, d_i))?;
    pairwise_statistic(&fit.rhats[0], &fit.rhats[1])
}

/// Add-one smoothed exceedance proportion `(1 + #{null ≥ observed}) / (N + 1)`.
pub fn empirical_p_value(observed: f64, null: &[f64]) -> f64 {
    let exceed = null.iter().filter(|&&t| t >= observed).count();
    (1 + exceed) as f64 / (null.len() + 1) as f64
}

/// Null statistics from `reps` pairs of graphs: pairs `0..reps/2` are drawn
/// from `p1`, the rest from `p2`. Pair `r` uses `stream.substream(r)`.
pub fn resampled_null<F>(
    p1: &DMatrix<f64>,
    p2: &DMatrix<f64>,
    reps: usize,
    stream: &RngStream,
    statistic: F,
) -> Result<Vec<f64>>
where
    F: Fn(&DMatrix<f64>, &DMatrix<f64>) -> Result<f64> + Sync,
{
    if reps == 0 || reps % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "the number of null pairs must be even and positive, got {reps}"
        )));
    }
    check_pair(p1, p2)?;
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let source = if r < reps / 2 { p1 } else { p2 };
            let mut rng = stream.substream(r as u64).rng();
            let x = sample_adjacency(source, &mut rng);
            let y = sample_adjacency(source, &mut rng);
            statistic(&x, &y)
        })
        .collect()
}

/// Rank-`d_i` reconstruction `V̂ D̂ V̂ᵀ` of a single graph (signed, i.e. the
/// scaled ASE outer product), clipped to `[0, 1]`.
pub fn low_rank_probability(a: &DMatrix<f64>, d_i: usize) -> Result<DMatrix<f64>> {
    let eig = top_eigs(a, d_i)?;
    let mut p = symmetrize(&eig.reconstruct());
    p.apply(|x| *x = x.clamp(0.0, 1.0));
    Ok(p)
}

/// Semiparametric bootstrap test.
pub fn bootstrap_test(
    a1: &Graph,
    a2: &Graph,
    d: usize,
    d_i: usize,
    reps: usize,
    stream: &RngStream,
) -> Result<TestResult> {
    bootstrap_test_matrices(a1.matrix(), a2.matrix(), d, d_i, reps, stream)
}

pub(crate) fn bootstrap_test_matrices(
    a1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    d: usize,
    d_i: usize,
    reps: usize,
    stream: &RngStream,
) -> Result<TestResult> {
    check_pair(a1, a2)?;
    let observed = mase_pair_statistic(a1, a2, d, d_i)?;
    let p1 = low_rank_probability(a1, d_i)?;
    let p2 = low_rank_probability(a2, d_i)?;
    let null = resampled_null(&p1, &p2, reps, stream, |x, y| mase_pair_statistic(x, y, d, d_i))?;
    Ok(TestResult {
        statistic: observed,
        p_value: empirical_p_value(observed, &null),
        method: TestMethod::Bootstrap,
        replicates: reps,
        d_used: d,
    })
}

/// Test against the null simulated from known probability matrices.
#[allow(clippy::too_many_arguments)]
pub fn exact_mc_test(
    a1: &Graph,
    a2: &Graph,
    p1: &DMatrix<f64>,
    p2: &DMatrix<f64>,
    d: usize,
    d_i: usize,
    reps: usize,
    stream: &RngStream,
) -> Result<TestResult> {
    check_pair(a1.matrix(), a2.matrix())?;
    check_pair(a1.matrix(), p1)?;
    let observed = mase_pair_statistic(a1.matrix(), a2.matrix(), d, d_i)?;
    let null = resampled_null(p1, p2, reps, stream, |x, y| mase_pair_statistic(x, y, d, d_i))?;
    Ok(TestResult {
        statistic: observed,
        p_value: empirical_p_value(observed, &null),
        method: TestMethod::ExactMc,
        replicates: reps,
        d_used: d,
    })
}

/// Draws of `T = Σ_k y²_kk + 2 Σ_{k<l} y²_kl` with `y ~ N(0, 2Σ)`, which is
/// `‖Y‖²_F` for the symmetric matrix `Y` with half-vectorisation `y`.
pub fn generalized_chi_square_draws(
    sigma: &ScoreCovariance,
    count: usize,
    stream: &RngStream,
) -> Result<Vec<f64>> {
    let root = psd_sqrt(&(&sigma.sigma * 2.0))?;
    let weights: Vec<f64> = vec_pairs(sigma.d)
        .into_iter()
        .map(|(k, l)| if k == l { 1.0 } else { 2.0 })
        .collect();
    let r = weights.len();
    let chunks = count.div_ceil(MC_CHUNK);
    let draws: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream.substream(c as u64).rng();
            let len = MC_CHUNK.min(count - c * MC_CHUNK);
            (0..len)
                .map(|_| {
                    let z = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let y = &root * z;
                    y.iter().zip(&weights).map(|(v, w)| w * v * v).sum()
                })
                .collect()
        })
        .collect();
    Ok(draws.into_iter().flatten().collect())
}

fn is_singular(sigma: &ScoreCovariance) -> bool {
    let eig = sigma.sigma.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    max == 0.0 || min <= 1e-12 * max
}

/// Test against the Monte Carlo generalised chi-square null; `mc_reps`
/// draws are taken from each of the two estimated covariances.
pub fn asymptotic_test(
    a1: &Graph,
    a2: &Graph,
    d: usize,
    d_i: usize,
    mc_reps: usize,
    stream: &RngStream,
) -> Result<TestResult> {
    asymptotic_test_matrices(a1.matrix(), a2.matrix(), d, d_i, mc_reps, stream)
}

pub(crate) fn asymptotic_test_matrices(
    a1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    d: usize,
    d_i: usize,
    mc_reps: usize,
    stream: &RngStream,
) -> Result<TestResult> {
    check_pair(a1, a2)?;
    if mc_reps == 0 {
        return Err(Error::InvalidArgument("mc_reps must be positive".into()));
    }
    let fit = mase_fit_matrices(&[a1, a2], &MaseOptions::fixed(d, d_i))?;
    let observed = pairwise_statistic(&fit.rhats[0], &fit.rhats[1])?;
    let mut null = Vec::with_capacity(2 * mc_reps);
    for (k, rhat) in fit.rhats.iter().enumerate() {
        let phat = reconstruct_p(&fit.vhat, rhat, true)?;
        let sigma = score_covariance(&fit.vhat, &phat)?;
        if observed == 0.0 && is_singular(&sigma) {
            return Err(Error::DegenerateCovariance(format!(
                "estimated score covariance of graph {} is singular and the statistic is 0",
                k + 1
            )));
        }
        null.extend(generalized_chi_square_draws(&sigma, mc_reps, &stream.substream(k as u64))?);
    }
    Ok(TestResult {
        statistic: observed,
        p_value: empirical_p_value(observed, &null),
        method: TestMethod::Asymptotic,
        replicates: 2 * mc_reps,
        d_used: d,
    })
}

/// Matrix of p-values for every pair of graphs in the collection; the
/// diagonal is 1. Pair `(i, j)`, `i < j`, uses `stream.substream2(i, j)`.
pub fn pairwise_test_matrix(
    collection: &GraphCollection,
    method: TestMethod,
    d: usize,
    d_i: usize,
    reps: usize,
    stream: &RngStream,
) -> Result<DMatrix<f64>> {
    let m = collection.len();
    if m < 2 {
        return Err(Error::InvalidArgument("need at least two graphs".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
        .collect();
    let graphs = collection.graphs();
    let p_values = pairs
        .par_iter()
        .map(|&(i, j)| {
            let a1 = graphs[i].matrix();
            let a2 = graphs[j].matrix();
            let sub = stream.substream2(i as u64, j as u64);
            let result = match method {
                TestMethod::Bootstrap => bootstrap_test_matrices(a1, a2, d, d_i, reps, &sub)?,
                TestMethod::Asymptotic => asymptotic_test_matrices(a1, a2, d, d_i, reps, &sub)?,
                TestMethod::ExactMc => {
                    return Err(Error::InvalidArgument(
                        "the exact Monte Carlo test needs known probability matrices".into(),
                    ))
                }
            };
            Ok(result.p_value)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = DMatrix::identity(m, m);
    for (&(i, j), &p) in pairs.iter().zip(&p_values) {
        out[(i, j)] = p;
        out[(j, i)] = p;
    }
    Ok(out)
}
