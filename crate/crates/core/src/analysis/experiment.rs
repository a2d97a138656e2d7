//! Monte Carlo simulation runner.
//!
//! Every scenario expands into a list of grid points. Point `p` draws from
//! `master.substream(p)`, replicate `r` of that point from
//! `master.substream2(p, r)`; replicates run in parallel and are collected in
//! index order, so reports do not depend on the number of threads.

use std::path::Path;

use log::info;
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{distance_matrix, knn_predict};
use crate::baselines::{mean_ase_matrices, omni_embed_matrices};
use crate::error::{Error, Result};
use crate::graphio::{create_dir, read_json, write_json, write_text};
use crate::inference::{
    estimate_eigenvalues, kmeans_cluster, misclustering_count, projection_distance, KMeansOptions,
    ProjectionNorm,
};
use crate::mase::{mase_fit_matrices, MaseOptions};
use crate::models::{equal_block_assignment, rows_to_matrix, sample_adjacency, sample_mmsbm_membership};
use crate::rng::RngStream;
use crate::spectral::top_eigs;
use crate::testing::{
    asymptotic_test_matrices, bootstrap_test_matrices, empirical_p_value, mase_pair_statistic,
    resampled_null,
};

pub const SCENARIOS: [&str; 6] = [
    "subspace_error",
    "eigenvalue_bias",
    "classification",
    "model_error",
    "community_detection",
    "testing_power",
];

type Rows = Vec<Vec<f64>>;

fn identity_plus_constant(k: usize, diag: f64, all: f64) -> Rows {
    (0..k)
        .map(|i| (0..k).map(|j| all + if i == j { diag } else { 0.0 }).collect())
        .collect()
}

fn default_alpha_grid() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5]
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubspaceErrorConfig {
    pub n: usize,
    pub k: usize,
    pub m_grid: Vec<usize>,
    /// `fixed`: every graph uses `fixed_b`; `random`: independent U(0,1)
    /// entries per graph.
    pub designs: Vec<String>,
    pub fixed_b: Rows,
    pub replicates_fixed: usize,
    pub replicates_random: usize,
    /// Any of `mase_unscaled`, `mase_scaled`, `mean_ase`.
    pub methods: Vec<String>,
}

impl Default for SubspaceErrorConfig {
    fn default() -> Self {
        SubspaceErrorConfig {
            n: 729,
            k: 3,
            m_grid: vec![1, 2, 4, 8, 16, 32],
            designs: strings(&["fixed", "random"]),
            fixed_b: vec![vec![0.4, 0.1, 0.1], vec![0.1, 0.4, 0.2], vec![0.1, 0.2, 0.3]],
            replicates_fixed: 25,
            replicates_random: 100,
            methods: strings(&["mase_unscaled", "mase_scaled", "mean_ase"]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenvalueBiasConfig {
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub b: Rows,
    pub replicates: usize,
}

impl Default for EigenvalueBiasConfig {
    fn default() -> Self {
        EigenvalueBiasConfig {
            n_grid: vec![300],
            m_grid: vec![1, 2, 4, 8, 16, 32, 64],
            b: identity_plus_constant(2, 0.3, 0.1),
            replicates: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassificationConfig {
    pub n: usize,
    /// Graphs per class in each of the training and test sets.
    pub per_class: usize,
    pub alpha_grid: Vec<f64>,
    pub replicates: usize,
    pub d: usize,
    pub scaled: bool,
    /// Any of `mase`, `omni`.
    pub methods: Vec<String>,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        ClassificationConfig {
            n: 256,
            per_class: 10,
            alpha_grid: default_alpha_grid(),
            replicates: 50,
            d: 2,
            scaled: false,
            methods: strings(&["mase", "omni"]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelErrorConfig {
    pub n: usize,
    pub per_class: usize,
    pub alpha_grid: Vec<f64>,
    pub replicates: usize,
    pub d: usize,
    pub scaled: bool,
    /// Any of `mase`, `omni`.
    pub methods: Vec<String>,
}

impl Default for ModelErrorConfig {
    fn default() -> Self {
        ModelErrorConfig {
            n: 256,
            per_class: 10,
            alpha_grid: default_alpha_grid(),
            replicates: 100,
            d: 2,
            scaled: false,
            methods: strings(&["mase", "omni"]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommunityDetectionConfig {
    pub n: usize,
    pub k: usize,
    /// `fixed`: `m_grid` graphs sharing `b`; `classes`: the four-class
    /// two-block design swept over `alpha_grid`.
    pub design: String,
    pub b: Rows,
    pub m_grid: Vec<usize>,
    pub per_class: usize,
    pub alpha_grid: Vec<f64>,
    pub replicates: usize,
    pub kmeans_restarts: usize,
    /// Any of `mase`, `omni`.
    pub methods: Vec<String>,
}

impl Default for CommunityDetectionConfig {
    fn default() -> Self {
        CommunityDetectionConfig {
            n: 256,
            k: 2,
            design: "classes".into(),
            b: identity_plus_constant(2, 0.3, 0.1),
            m_grid: vec![1, 2, 4, 8, 16],
            per_class: 10,
            alpha_grid: default_alpha_grid(),
            replicates: 100,
            kmeans_restarts: 10,
            methods: strings(&["mase", "omni"]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestingPowerConfig {
    pub n: usize,
    /// `connectivity`: grid values are increments of `B₂[0][0]`;
    /// `membership`: grid values are the number `t` of leading vertices
    /// whose memberships are drawn independently in the two graphs.
    pub design: String,
    pub k: usize,
    pub dirichlet_alpha: f64,
    pub b: Rows,
    pub grid: Option<Vec<f64>>,
    pub trials: usize,
    /// Joint dimension; defaults to `k` (connectivity) or `2k − 1`
    /// (membership).
    pub d: Option<usize>,
    /// Per-graph dimension; defaults to `k`.
    pub d_i: Option<usize>,
    pub bootstrap_reps: usize,
    pub mc_reps: usize,
    pub exact_reps: usize,
    pub level: f64,
    /// Any of `bootstrap`, `asymptotic`, `exact_mc`, `omni_exact_mc`.
    pub methods: Vec<String>,
}

impl Default for TestingPowerConfig {
    fn default() -> Self {
        TestingPowerConfig {
            n: 300,
            design: "connectivity".into(),
            k: 3,
            dirichlet_alpha: 0.1,
            b: identity_plus_constant(3, 0.3, 0.1),
            grid: None,
            trials: 100,
            d: None,
            d_i: None,
            bootstrap_reps: 1000,
            mc_reps: 1000,
            exact_reps: 1000,
            level: 0.05,
            methods: strings(&["bootstrap", "asymptotic", "exact_mc", "omni_exact_mc"]),
        }
    }
}

impl TestingPowerConfig {
    pub fn grid(&self) -> Vec<f64> {
        match &self.grid {
            Some(g) => g.clone(),
            None if self.design == "membership" => vec![0.0, 10.0, 20.0, 40.0, 80.0],
            None => vec![0.0, 0.02, 0.04, 0.06, 0.08, 0.1],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        let d_i = self.d_i.unwrap_or(self.k);
        let d = self.d.unwrap_or(if self.design == "membership" {
            2 * self.k - 1
        } else {
            self.k
        });
        (d, d_i)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", content = "config", rename_all = "snake_case")]
pub enum ExperimentConfig {
    SubspaceError(SubspaceErrorConfig),
    EigenvalueBias(EigenvalueBiasConfig),
    Classification(ClassificationConfig),
    ModelError(ModelErrorConfig),
    CommunityDetection(CommunityDetectionConfig),
    TestingPower(TestingPowerConfig),
}

impl ExperimentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentConfig::SubspaceError(_) => "subspace_error",
            ExperimentConfig::EigenvalueBias(_) => "eigenvalue_bias",
            ExperimentConfig::Classification(_) => "classification",
            ExperimentConfig::ModelError(_) => "model_error",
            ExperimentConfig::CommunityDetection(_) => "community_detection",
            ExperimentConfig::TestingPower(_) => "testing_power",
        }
    }

    /// Parse the scenario-specific settings; missing fields take defaults.
    pub fn from_value(scenario: &str, value: serde_json::Value) -> Result<Self> {
        fn parse<T: serde::de::DeserializeOwned>(scenario: &str, v: serde_json::Value) -> Result<T> {
            serde_json::from_value(v)
                .map_err(|e| Error::InvalidParameters(format!("{scenario} config: {e}")))
        }
        Ok(match scenario {
            "subspace_error" => ExperimentConfig::SubspaceError(parse(scenario, value)?),
            "eigenvalue_bias" => ExperimentConfig::EigenvalueBias(parse(scenario, value)?),
            "classification" => ExperimentConfig::Classification(parse(scenario, value)?),
            "model_error" => ExperimentConfig::ModelError(parse(scenario, value)?),
            "community_detection" => ExperimentConfig::CommunityDetection(parse(scenario, value)?),
            "testing_power" => ExperimentConfig::TestingPower(parse(scenario, value)?),
            other => return Err(Error::UnknownScenario(other.to_string())),
        })
    }

    pub fn default_for(scenario: &str) -> Result<Self> {
        Self::from_value(scenario, serde_json::json!({}))
    }

    /// Settings for `scenario` from a JSON file, or the defaults.
    pub fn load(scenario: &str, path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_value(scenario, read_json(p)?),
            None => Self::default_for(scenario),
        }
    }
}

/// One measured value.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub point: usize,
    pub label: String,
    pub x: f64,
    pub replicate: usize,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub point: usize,
    pub label: String,
    pub x: f64,
    pub method: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub records: Vec<Record>,
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    seed: u64,
    #[serde(flatten)]
    config: &'a ExperimentConfig,
}

impl Report {
    /// Values of one (point, method, metric) series in replicate order.
    pub fn values(&self, point: usize, method: &str, metric: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.point == point && r.method == method && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    /// Index of the grid point with the given label and x value.
    pub fn point(&self, label: &str, x: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.label == label && r.x == x)
            .map(|r| r.point)
    }

    pub fn mean(&self, point: usize, method: &str, metric: &str) -> Option<f64> {
        let v = self.values(point, method, metric);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean and standard error per (point, method, metric), in order of
    /// first appearance.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(usize, &str, &str)> = Vec::new();
        for r in &self.records {
            let key = (r.point, r.method.as_str(), r.metric.as_str());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.into_iter()
            .map(|(point, method, metric)| {
                let first = self
                    .records
                    .iter()
                    .find(|r| r.point == point)
                    .expect("key came from a record");
                let v = self.values(point, method, metric);
                let n = v.len();
                let mean = v.iter().sum::<f64>() / n as f64;
                let stderr = if n > 1 {
                    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                    (var / n as f64).sqrt()
                } else {
                    0.0
                };
                SummaryRow {
                    point,
                    label: first.label.clone(),
                    x: first.x,
                    method: method.to_string(),
                    metric: metric.to_string(),
                    n,
                    mean,
                    stderr,
                }
            })
            .collect()
    }

    pub fn raw_csv(&self) -> String {
        let mut out = String::from("point,label,x,replicate,method,metric,value\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.point, r.label, r.x, r.replicate, r.method, r.metric, r.value
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("point,label,x,method,metric,n,mean,stderr\n");
        for s in self.summary() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.point, s.label, s.x, s.method, s.metric, s.n, s.mean, s.stderr
            ));
        }
        out
    }

    /// Write `raw.csv`, `summary.csv` and `config_echo.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        create_dir(dir)?;
        write_text(dir.join("raw.csv"), &self.raw_csv())?;
        write_text(dir.join("summary.csv"), &self.summary_csv())?;
        write_json(
            dir.join("config_echo.json"),
            &ConfigEcho {
                seed: self.seed,
                config: &self.config,
            },
        )
    }
}

pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<Report> {
    let master = RngStream::new(seed);
    let mut out = Collector::default();
    match config {
        ExperimentConfig::SubspaceError(c) => subspace_error(c, &master, &mut out)?,
        ExperimentConfig::EigenvalueBias(c) => eigenvalue_bias(c, &master, &mut out)?,
        ExperimentConfig::Classification(c) => classification(c, &master, &mut out)?,
        ExperimentConfig::ModelError(c) => model_error(c, &master, &mut out)?,
        ExperimentConfig::CommunityDetection(c) => community_detection(c, &master, &mut out)?,
        ExperimentConfig::TestingPower(c) => testing_power(c, &master, &mut out)?,
    }
    Ok(Report {
        config: config.clone(),
        seed,
        records: out.records,
    })
}

/// (method, metric, value) triples produced by one replicate.
type Measurements = Vec<(String, String, f64)>;

#[derive(Default)]
struct Collector {
    records: Vec<Record>,
    points: usize,
}

impl Collector {
    /// Run `count` replicates of a new grid point in parallel.
    fn point<F>(&mut self, label: &str, x: f64, count: usize, replicate: F) -> Result<()>
    where
        F: Fn(usize) -> Result<Measurements> + Sync + Send,
    {
        let point = self.points;
        self.points += 1;
        info!("point {point} ({label}, x = {x}): {count} replicates");
        let results: Vec<Measurements> = (0..count).into_par_iter().map(replicate).collect::<Result<_>>()?;
        for (r, measurements) in results.into_iter().enumerate() {
            for (method, metric, value) in measurements {
                self.records.push(Record {
                    point,
                    label: label.to_string(),
                    x,
                    replicate: r,
                    method,
                    metric,
                    value,
                });
            }
        }
        Ok(())
    }

    fn next_point(&self) -> u64 {
        self.points as u64
    }
}

fn check_methods(methods: &[String], allowed: &[&str]) -> Result<()> {
    if methods.is_empty() {
        return Err(Error::InvalidParameters("no methods selected".into()));
    }
    for m in methods {
        if !allowed.contains(&m.as_str()) {
            return Err(Error::InvalidParameters(format!(
                "unknown method `{m}`; expected one of {}",
                allowed.join(", ")
            )));
        }
    }
    Ok(())
}

fn connectivity(rows: &Rows, k: usize) -> Result<DMatrix<f64>> {
    let b = rows_to_matrix(rows)?;
    if b.shape() != (k, k) {
        return Err(Error::InvalidParameters(format!(
            "connectivity must be {k}x{k}, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    check_connectivity(&b)?;
    Ok(b)
}

fn check_connectivity(b: &DMatrix<f64>) -> Result<()> {
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            let x = b[(i, j)];
            if !(0.0..=1.0).contains(&x) || x != b[(j, i)] {
                return Err(Error::InvalidParameters(format!(
                    "connectivity entry ({i}, {j}) = {x} must be a symmetric probability"
                )));
            }
        }
    }
    Ok(())
}

fn check_sizes(n: usize, k: usize) -> Result<()> {
    if k == 0 || n < k {
        return Err(Error::InvalidParameters(format!(
            "need 1 <= K <= n, got K = {k}, n = {n}"
        )));
    }
    Ok(())
}

/// `Z B Zᵀ` for hard assignments.
fn sbm_probability(z: &[usize], b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.len();
    DMatrix::from_fn(n, n, |u, v| b[(z[u], z[v])])
}

/// Orthonormal basis `Z (ZᵀZ)^{-1/2}` of the block indicator vectors.
fn block_basis(z: &[usize], k: usize) -> DMatrix<f64> {
    let mut sizes = vec![0usize; k];
    for &c in z {
        sizes[c] += 1;
    }
    let mut v = DMatrix::zeros(z.len(), k);
    for (u, &c) in z.iter().enumerate() {
        v[(u, c)] = 1.0 / (sizes[c] as f64).sqrt();
    }
    v
}

fn sample(p: &DMatrix<f64>, stream: &RngStream) -> DMatrix<f64> {
    sample_adjacency(p, &mut stream.rng())
}

fn refs(graphs: &[DMatrix<f64>]) -> Vec<&DMatrix<f64>> {
    graphs.iter().collect()
}

fn measurement(method: &str, metric: &str, value: f64) -> (String, String, f64) {
    (method.to_string(), metric.to_string(), value)
}

fn subspace_error(c: &SubspaceErrorConfig, master: &RngStream, out: &mut Collector) -> Result<()> {
    check_methods(&c.methods, &["mase_unscaled", "mase_scaled", "mean_ase"])?;
    check_sizes(c.n, c.k)?;
    let fixed = connectivity(&c.fixed_b, c.k)?;
    let z = equal_block_assignment(c.n, c.k);
    let v = block_basis(&z, c.k);
    for design in &c.designs {
        let reps = match design.as_str() {
            "fixed" => c.replicates_fixed,
            "random" => c.replicates_random,
            other => {
                return Err(Error::InvalidParameters(format!(
                    "unknown design `{other}`; expected fixed or random"
                )))
            }
        };
        for &m in &c.m_grid {
            if m == 0 {
                return Err(Error::InvalidParameters("m must be positive".into()));
            }
            let point = master.substream(out.next_point());
            out.point(design, m as f64, reps, |r| {
                let rs = point.substream(r as u64);
                let mut brng = rs.substream(1).rng();
                let graphs: Vec<DMatrix<f64>> = (0..m)
                    .map(|i| {
                        let b = if design == "fixed" {
                            fixed.clone()
                        } else {
                            let mut b = DMatrix::zeros(c.k, c.k);
                            for a in 0..c.k {
                                for e in a..c.k {
                                    let x: f64 = brng.random();
                                    b[(a, e)] = x;
                                    b[(e, a)] = x;
                                }
                            }
                            b
                        };
                        sample(&sbm_probability(&z, &b), &rs.substream2(0, i as u64))
                    })
                    .collect();
                let graphs = refs(&graphs);
                let mut res = Vec::new();
                for method in &c.methods {
                    let vhat = match method.as_str() {
                        "mase_unscaled" => mase_fit_matrices(&graphs, &MaseOptions::fixed(c.k, c.k))?.vhat,
                        "mase_scaled" => {
                            mase_fit_matrices(&graphs, &MaseOptions::fixed(c.k, c.k).scaled(true))?.vhat
                        }
                        _ => mean_ase_matrices(&graphs, c.k)?,
                    };
                    res.push(measurement(
                        method,
                        "spectral",
                        projection_distance(&vhat, &v, ProjectionNorm::Spectral)?,
                    ));
                    res.push(measurement(
                        method,
                        "frobenius",
                        projection_distance(&vhat, &v, ProjectionNorm::Frobenius)?,
                    ));
                }
                Ok(res)
            })?;
        }
    }
    Ok(())
}

/// Top-`k` eigenvalues by magnitude, largest first.
fn leading_eigenvalues(s: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    Ok(top_eigs(s, k)?.values.iter().copied().collect())
}

fn eigenvalue_bias(c: &EigenvalueBiasConfig, master: &RngStream, out: &mut Collector) -> Result<()> {
    let k = c.b.len();
    let b = connectivity(&c.b, k)?;
    for &n in &c.n_grid {
        check_sizes(n, k)?;
        let z = equal_block_assignment(n, k);
        let p = sbm_probability(&z, &b);
        let truth_p = leading_eigenvalues(&p, k)?;
        let mut hollow = p.clone();
        hollow.fill_diagonal(0.0);
        let truth_hollow = leading_eigenvalues(&hollow, k)?;
        let label = format!("n={n}");
        for &m in &c.m_grid {
            if m == 0 {
                return Err(Error::InvalidParameters("m must be positive".into()));
            }
            let point = master.substream(out.next_point());
            out.point(&label, m as f64, c.replicates, |r| {
                let rs = point.substream(r as u64);
                let graphs: Vec<DMatrix<f64>> =
                    (0..m).map(|i| sample(&p, &rs.substream(i as u64))).collect();
                let fit = mase_fit_matrices(&refs(&graphs), &MaseOptions::fixed(k, k))?;
                let est = estimate_eigenvalues(&fit.rhats[0])?;
                let mut res = Vec::new();
                for j in 0..k {
                    res.push(measurement("mase", &format!("lambda{}_bias", j + 1), est[j] - truth_hollow[j]));
                    res.push(measurement("mase", &format!("lambda{}_bias_vs_p", j + 1), est[j] - truth_p[j]));
                }
                Ok(res)
            })?;
        }
    }
    Ok(())
}

/// The four two-block class connectivities `0.25·𝟙𝟙ᵀ + α C_k`.
fn class_connectivities(alpha: f64) -> Result<Vec<DMatrix<f64>>> {
    let c = [[0.1, 0.1], [-0.1, -0.1], [0.1, 0.0], [0.0, 0.1]];
    c.iter()
        .map(|diag| {
            let b = DMatrix::from_fn(2, 2, |i, j| 0.25 + if i == j { alpha * diag[i] } else { 0.0 });
            check_connectivity(&b)?;
            Ok(b)
        })
        .collect()
}

/// `count` graphs cycling through the four classes in blocks of
/// `per_class`: graph `i` has class `(i mod 4·per_class) / per_class`.
fn class_graphs(
    z: &[usize],
    alpha: f64,
    per_class: usize,
    count: usize,
    stream: &RngStream,
) -> Result<(Vec<DMatrix<f64>>, Vec<usize>, Vec<DMatrix<f64>>)> {
    let probs: Vec<DMatrix<f64>> = class_connectivities(alpha)?
        .iter()
        .map(|b| sbm_probability(z, b))
        .collect();
    let labels: Vec<usize> = (0..count).map(|i| (i % (4 * per_class)) / per_class).collect();
    let graphs = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sample(&probs[l], &stream.substream(i as u64)))
        .collect();
    Ok((graphs, labels, probs))
}

fn classification(c: &ClassificationConfig, master: &RngStream, out: &mut Collector) -> Result<()> {
    check_methods(&c.methods, &["mase", "omni"])?;
    check_sizes(c.n, 2)?;
    if c.per_class == 0 {
        return Err(Error::InvalidParameters("per_class must be positive".into()));
    }
    let z = equal_block_assignment(c.n, 2);
    let half = 4 * c.per_class;
    let train: Vec<usize> = (0..half).collect();
    let test: Vec<usize> = (half..2 * half).collect();
    for &alpha in &c.alpha_grid {
        class_connectivities(alpha)?;
        let point = master.substream(out.next_point());
        out.point("alpha", alpha, c.replicates, |r| {
            let rs = point.substream(r as u64);
            let (graphs, labels, _) = class_graphs(&z, alpha, c.per_class, 2 * half, &rs.substream(0))?;
            let graphs = refs(&graphs);
            let mut res = Vec::new();
            for method in &c.methods {
                let items = if method == "mase" {
                    mase_fit_matrices(&graphs, &MaseOptions::fixed(c.d, c.d).scaled(c.scaled))?.rhats
                } else {
                    omni_embed_matrices(&graphs, c.d)?.positions
                };
                let dist = distance_matrix(&items)?;
                let predicted = knn_predict(&dist, &labels, &train, &test, 1)?;
                let correct = test.iter().zip(&predicted).filter(|(&i, &p)| labels[i] == p).count();
                res.push(measurement(method, "accuracy", correct as f64 / test.len() as f64));
            }
            Ok(res)
        })?;
    }
    Ok(())
}

fn model_error(c: &ModelErrorConfig, master: &RngStream, out: &mut Collector) -> Result<()> {
    check_methods(&c.methods, &["mase", "omni"])?;
    check_sizes(c.n, 2)?;
    if c.per_class == 0 {
        return Err(Error::InvalidParameters("per_class must be positive".into()));
    }
    let z = equal_block_assignment(c.n, 2);
    let m = 4 * c.per_class;
    for &alpha in &c.alpha_grid {
        class_connectivities(alpha)?;
        let point = master.substream(out.next_point());
        out.point("alpha", alpha, c.replicates, |r| {
            let rs = point.substream(r as u64);
            let (graphs, labels, probs) = class_graphs(&z, alpha, c.per_class, m, &rs.substream(0))?;
            let graphs = refs(&graphs);
            let mut res = Vec::new();
            for method in &c.methods {
                let estimates: Vec<DMatrix<f64>> = if method == "mase" {
                    let fit = mase_fit_matrices(&graphs, &MaseOptions::fixed(c.d, c.d).scaled(c.scaled))?;
                    fit.rhats.iter().map(|r| &fit.vhat * r * fit.vhat.transpose()).collect()
                } else {
                    omni_embed_matrices(&graphs, c.d)?
                        .positions
                        .iter()
                        .map(|x| x * x.transpose())
                        .collect()
                };
                let err: f64 = estimates
                    .iter()
                    .zip(&labels)
                    .map(|(phat, &l)| (phat - &probs[l]).norm() / probs[l].norm())
                    .sum::<f64>()
                    / m as f64;
                res.push(measurement(method, "relative_error", err));
            }
            Ok(res)
        })?;
    }
    Ok(())
}

fn community_detection(c: &CommunityDetectionConfig, master: &RngStream, out: &mut Collector) -> Result<()> {
    check_methods(&c.methods, &["mase", "omni"])?;
    check_sizes(c.n, c.k)?;
    let z = equal_block_assignment(c.n, c.k);
    // (x, number of graphs, per-graph probability matrices)
    let mut points: Vec<(f64, Vec<DMatrix<f64>>)> = Vec::new();
    match c.design.as_str() {
        "fixed" => {
            let p = sbm_probability(&z, &connectivity(&c.b, c.k)?);
            for &m in &c.m_grid {
                if m == 0 {
                    return Err(Error::InvalidParameters("m must be positive".into()));
                }
                points.push((m as f64, vec![p.clone(); m]));
            }
        }
        "classes" => {
            if c.k != 2 {
                return Err(Error::InvalidParameters("the classes design has K = 2".into()));
            }
            for &alpha in &c.alpha_grid {
                let probs: Vec<DMatrix<f64>> = class_connectivities(alpha)?
                    .iter()
                    .map(|b| sbm_probability(&z, b))
                    .collect();
                let all = (0..4 * c.per_class).map(|i| probs[i / c.per_class].clone()).collect();
                points.push((alpha, all));
            }
        }
        other => {
            return Err(Error::InvalidParameters(format!(
                "unknown design `{other}`; expected fixed or classes"
            )))
        }
    }
    for (x, probs) in &points {
        let point = master.substream(out.next_point());
        out.point(&c.design, *x, c.replicates, |r| {
            let rs = point.substream(r as u64);
            let graphs: Vec<DMatrix<f64>> = probs
                .iter()
                .enumerate()
                .map(|(i, p)| sample(p, &rs.substream2(0, i as u64)))
                .collect();
            let graphs = refs(&graphs);
            let opts = KMeansOptions {
                restarts: c.kmeans_restarts,
                ..KMeansOptions::with_seed(rs.substream(1).seed_u64())
            };
            let mut res = Vec::new();
            for method in &c.methods {
                let positions = if method == "mase" {
                    mase_fit_matrices(&graphs, &MaseOptions::fixed(c.k, c.k))?.vhat
                } else {
                    let omni = omni_embed_matrices(&graphs, c.k)?;
                    let mut mean = DMatrix::zeros(c.n, c.k);
                    for x in &omni.positions {
                        mean += x;
                    }
                    mean / omni.m() as f64
                };
                let fit = kmeans_cluster(&positions, c.k, &opts)?;
                let wrong = misclustering_count(&fit.assignment, &z, c.k)?;
                res.push(measurement(method, "misclustered", wrong as f64));
                res.push(measurement(method, "accuracy", 1.0 - wrong as f64 / c.n as f64));
            }
            Ok(res)
        })?;
    }
    Ok(())
}

fn mmsbm_probability(z: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    z * b * z.transpose()
}

fn omni_pair_statistic(a1: &DMatrix<f64>, a2: &DMatrix<f64>, d: usize) -> Result<f64> {
    Ok(omni_embed_matrices(&[a1, a2], d)?.squared_distance(0, 1))
}

fn testing_power(c: &TestingPowerConfig, master: &RngStream, out: &mut Collector) -> Result<()> {
    check_methods(&c.methods, &["bootstrap", "asymptotic", "exact_mc", "omni_exact_mc"])?;
    check_sizes(c.n, c.k)?;
    let b1 = connectivity(&c.b, c.k)?;
    let (d, d_i) = c.dims();
    if !(c.level > 0.0 && c.level < 1.0) {
        return Err(Error::InvalidParameters(format!("level must lie in (0, 1), got {}", c.level)));
    }
    let uses = |m: &str| c.methods.iter().any(|x| x == m);
    for x in c.grid() {
        let point = master.substream(out.next_point());
        let z1 = sample_mmsbm_membership(c.n, c.k, c.dirichlet_alpha, &mut point.substream(1).rng())?;
        let (z2, b2) = match c.design.as_str() {
            "connectivity" => {
                let mut b2 = b1.clone();
                b2[(0, 0)] += x;
                check_connectivity(&b2)?;
                (z1.clone(), b2)
            }
            "membership" => {
                if x < 0.0 || x.fract() != 0.0 || x as usize > c.n {
                    return Err(Error::InvalidParameters(format!(
                        "membership grid values must be integers in [0, n], got {x}"
                    )));
                }
                let t = x as usize;
                let fresh = sample_mmsbm_membership(t, c.k, c.dirichlet_alpha, &mut point.substream(2).rng())?;
                let mut z2 = z1.clone();
                z2.rows_mut(0, t).copy_from(&fresh);
                (z2, b1.clone())
            }
            other => {
                return Err(Error::InvalidParameters(format!(
                    "unknown design `{other}`; expected connectivity or membership"
                )))
            }
        };
        let p1 = mmsbm_probability(&z1, &b1);
        let p2 = mmsbm_probability(&z2, &b2);
        // exact nulls depend only on (P1, P2) and are shared by all trials
        let mase_null = if uses("exact_mc") {
            resampled_null(&p1, &p2, c.exact_reps, &point.substream(3), |a, b| {
                mase_pair_statistic(a, b, d, d_i)
            })?
        } else {
            Vec::new()
        };
        let omni_null = if uses("omni_exact_mc") {
            resampled_null(&p1, &p2, c.exact_reps, &point.substream(4), |a, b| {
                omni_pair_statistic(a, b, d)
            })?
        } else {
            Vec::new()
        };
        out.point(&c.design, x, c.trials, |trial| {
            let rs = point.substream2(0, trial as u64);
            let a1 = sample(&p1, &rs.substream2(0, 0));
            let a2 = sample(&p2, &rs.substream2(0, 1));
            let mut res = Vec::new();
            for method in &c.methods {
                let p = match method.as_str() {
                    "bootstrap" => {
                        bootstrap_test_matrices(&a1, &a2, d, d_i, c.bootstrap_reps, &rs.substream(1))?.p_value
                    }
                    "asymptotic" => asymptotic_test_matrices(&a1, &a2, d, d_i, c.mc_reps, &rs.substream(2))?.p_value,
                    "exact_mc" => empirical_p_value(mase_pair_statistic(&a1, &a2, d, d_i)?, &mase_null),
                    _ => empirical_p_value(omni_pair_statistic(&a1, &a2, d)?, &omni_null),
                };
                res.push(measurement(method, "p_value", p));
                res.push(measurement(method, "reject", if p <= c.level { 1.0 } else { 0.0 }));
            }
            Ok(res)
        })?;
    }
    Ok(())
}
