//! Common-subspace models for populations of vertex-aligned graphs.
//!
//! The crate implements multiple adjacency spectral embedding (MASE) for the
//! common subspace independent-edge model, together with samplers,
//! community detection, score-matrix inference, two-sample tests between
//! graphs, baseline embeddings and a simulation runner.

pub mod analysis;
pub mod baselines;
pub mod error;
pub mod graphio;
pub mod inference;
pub mod linalg;
pub mod mase;
pub mod models;
pub mod rng;
pub mod spectral;
pub mod testing;

pub use error::{Error, Result};
pub use graphio::{Graph, GraphCollection, GraphKind};
pub use mase::{mase_fit, Dim, GraphDims, MaseEmbedding, MaseOptions};
pub use models::{CosieParams, MmsbmParams, MultilayerSbmParams};
pub use rng::RngStream;
pub use spectral::{ase, elbow_dimension, top_eigs, EigenPairs};
pub use testing::{TestMethod, TestResult};
pub use baselines::{mean_ase, omni_embed, OmniEmbedding};
pub use analysis::{cmds, distance_matrix, knn_cv_classify, run_experiment, DistanceMatrix, ExperimentConfig, Report};
