use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::json;

use cosie::analysis::{cmds, distance_matrix, knn_cv_classify, ExperimentConfig};
use cosie::graphio::{
    fmt_f64, load_collection, load_edge_list, load_matrix, save_edge_list, save_manifest, save_matrix,
    Manifest, ManifestEntry,
};
use cosie::inference::{kmeans_cluster, misclustering_count, KMeansOptions};
use cosie::mase::{mase_fit, Dim, GraphDims, MaseEmbedding, MaseOptions};
use cosie::models::{sample_collection, sbm_to_cosie, CosieParams, MultilayerSbmParams};
use cosie::spectral::{eigenvalue_magnitudes, elbow_dimension};
use cosie::testing::{pairwise_test_matrix, TestMethod};
use cosie::{mean_ase, omni_embed, run_experiment, RngStream};

#[derive(Parser)]
#[command(name = "cosie", version, about = "Joint spectral embedding and inference for populations of graphs")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Choose an embedding dimension with the elbow rule.
    SelectDim(SelectDimArgs),
    /// Embed a collection of graphs.
    Embed(EmbedArgs),
    /// K-means on the rows of an embedding's `V.csv`.
    Cluster(ClusterArgs),
    /// Pairwise two-sample tests between all graphs of a collection.
    Test(TestArgs),
    /// Distance matrix, CMDS coordinates and cross-validated 1-NN accuracy.
    Analyze(AnalyzeArgs),
    /// Sample a collection from a model.
    Sample(SampleArgs),
    /// Run a simulation scenario.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SelectDimArgs {
    /// A single edge-list file: scan the eigenvalue magnitudes of A.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    graph: Option<PathBuf>,
    /// A collection: per-graph dimensions by elbow, then the joint dimension
    /// from the singular values of the concatenated embeddings.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    max_candidates: Option<usize>,
    /// Also write the spectrum as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedMethod {
    Mase,
    Omni,
    MeanAse,
}

#[derive(Clone, Copy, Debug)]
enum DimArg {
    Auto,
    Fixed(usize),
}

impl FromStr for DimArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(DimArg::Auto);
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected `auto` or a positive integer, got `{s}`")),
            Ok(d) => Ok(DimArg::Fixed(d)),
        }
    }
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "mase")]
    method: EmbedMethod,
    /// Joint dimension or `auto` (auto is MASE only).
    #[arg(long, default_value = "auto")]
    d: DimArg,
    /// Per-graph dimension or `auto`.
    #[arg(long, default_value = "auto")]
    di: DimArg,
    #[arg(long, conflicts_with = "unscaled")]
    scaled: bool,
    #[arg(long)]
    unscaled: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    /// Directory holding `V.csv`.
    #[arg(long)]
    embedding: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// JSON array of 0-based true labels (or `{"z": [...]}`).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Write the JSON result here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "bootstrap")]
    method: TestMethod,
    #[arg(long)]
    d: usize,
    /// Per-graph dimension (default: `d`).
    #[arg(long)]
    di: Option<usize>,
    /// Bootstrap pairs, or Monte Carlo draws per graph for the asymptotic test.
    #[arg(long, default_value_t = cosie::testing::DEFAULT_BOOTSTRAP_REPS)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Directory with `R_<i>.csv` score matrices.
    #[arg(long)]
    embedding: PathBuf,
    /// Manifest providing the graph labels.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    cmds_dim: usize,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    neighbors: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    /// Multilayer SBM parameters as JSON (`z`, `B`).
    #[arg(long, conflicts_with = "cosie", required_unless_present = "cosie")]
    sbm: Option<PathBuf>,
    /// Directory with `V.csv` and `R_<i>.csv`.
    #[arg(long)]
    cosie: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    scenario: String,
    /// Scenario settings as JSON; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::SelectDim(a) => select_dim(a),
        Command::Embed(a) => embed(a),
        Command::Cluster(a) => cluster(a),
        Command::Test(a) => test(a),
        Command::Analyze(a) => analyze(a),
        Command::Sample(a) => sample(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn spectrum_csv(values: &[f64]) -> String {
    let mut out = String::from("rank,value\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, fmt_f64(*v)));
    }
    out
}

fn select_dim(a: SelectDimArgs) -> Result<()> {
    let (d, spectrum) = if let Some(path) = &a.graph {
        let g = load_edge_list(path, None)?;
        let mags = eigenvalue_magnitudes(g.matrix())?;
        (elbow_dimension(&mags, a.max_candidates)?, mags)
    } else {
        let collection = load_collection(a.manifest.as_ref().expect("clap enforces one input"))?;
        let mut opts = MaseOptions::default();
        opts.max_candidates = a.max_candidates;
        let fit = mase_fit(&collection, &opts)?;
        (fit.d, fit.singular_values)
    };
    let csv = spectrum_csv(&spectrum);
    println!("d={d}");
    print!("{csv}");
    if let Some(out) = &a.out {
        write(out, &csv)?;
    }
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let collection = load_collection(&a.manifest)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let fixed_d = |what: &str| match a.d {
        DimArg::Fixed(d) => Ok(d),
        DimArg::Auto => bail!("--d auto is only available for MASE; give a dimension for {what}"),
    };
    match a.method {
        EmbedMethod::Mase => {
            let opts = MaseOptions::new(
                match a.d {
                    DimArg::Auto => Dim::Auto,
                    DimArg::Fixed(d) => Dim::Fixed(d),
                },
                match a.di {
                    DimArg::Auto => GraphDims::Auto,
                    DimArg::Fixed(d) => GraphDims::Uniform(d),
                },
                a.scaled,
            );
            let fit = mase_fit(&collection, &opts)?;
            if fit.numerical_rank < fit.d {
                log::warn!(
                    "concatenated embedding has numerical rank {} < d = {}",
                    fit.numerical_rank,
                    fit.d
                );
            }
            fit.save(&a.out)?;
            eprintln!("embedded {} graphs: d = {}, d_i = {:?}", fit.m(), fit.d, fit.d_i);
        }
        EmbedMethod::Omni => {
            let omni = omni_embed(&collection, fixed_d("OMNI")?)?;
            for (i, x) in omni.positions.iter().enumerate() {
                save_matrix(a.out.join(format!("X_{}.csv", i + 1)), x)?;
            }
        }
        EmbedMethod::MeanAse => {
            save_matrix(a.out.join("V.csv"), &mean_ase(&collection, fixed_d("ASE(mean)")?)?)?;
        }
    }
    Ok(())
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let array = value.get("z").cloned().unwrap_or(value);
    serde_json::from_value(array).with_context(|| format!("{} is not a list of labels", path.display()))
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let v = load_matrix(a.embedding.join("V.csv"))?;
    let opts = KMeansOptions {
        restarts: a.restarts,
        ..KMeansOptions::with_seed(a.seed)
    };
    let fit = kmeans_cluster(&v, a.k, &opts)?;
    let mut result = json!({
        "k": a.k,
        "seed": a.seed,
        "assignment": fit.assignment,
        "cost": fit.cost,
    });
    if let Some(reference) = &a.reference {
        let z = read_labels(reference)?;
        result["misclustered"] = json!(misclustering_count(&fit.assignment, &z, a.k)?);
    }
    let text = serde_json::to_string_pretty(&result)? + "\n";
    match &a.out {
        Some(p) => write(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn test(a: TestArgs) -> Result<()> {
    let collection = load_collection(&a.manifest)?;
    let p = pairwise_test_matrix(
        &collection,
        a.method,
        a.d,
        a.di.unwrap_or(a.d),
        a.reps,
        &RngStream::new(a.seed),
    )?;
    write(&a.out, &matrix_csv(&p))
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let fit = MaseEmbedding::load(&a.embedding)?;
    let dist = distance_matrix(&fit.rhats)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_matrix(a.out.join("distances.csv"), dist.matrix())?;
    save_matrix(a.out.join("cmds.csv"), &cmds(&dist, a.cmds_dim.min(dist.m()))?)?;
    if let Some(manifest) = &a.manifest {
        let collection = load_collection(manifest)?;
        let Some(labels) = collection.labels() else {
            bail!("manifest {} has no labels", manifest.display());
        };
        if labels.len() != dist.m() {
            bail!("{} labels for {} score matrices", labels.len(), dist.m());
        }
        let report = knn_cv_classify(
            &dist,
            labels,
            a.folds,
            a.neighbors,
            &mut RngStream::new(a.seed).rng(),
        )?;
        let folds: Vec<_> = report
            .folds
            .iter()
            .map(|f| json!({"test": f.test, "correct": f.correct}))
            .collect();
        let text = serde_json::to_string_pretty(&json!({
            "accuracy": report.accuracy,
            "folds": folds,
            "predictions": report.predictions,
        }))? + "\n";
        write(&a.out.join("classification.json"), &text)?;
        println!("cross-validated accuracy: {}", report.accuracy);
    }
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let params = match (&a.sbm, &a.cosie) {
        (Some(p), _) => sbm_to_cosie(&MultilayerSbmParams::load_json(p)?)?,
        (None, Some(dir)) => CosieParams::load(dir)?,
        (None, None) => unreachable!("clap enforces one source"),
    };
    let collection = sample_collection(&params, &RngStream::new(a.seed))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut manifest = Manifest::default();
    for (i, g) in collection.graphs().iter().enumerate() {
        let file = format!("graph_{}.txt", i + 1);
        save_edge_list(a.out.join(&file), g)?;
        manifest.graphs.push(ManifestEntry {
            path: file.into(),
            label: None,
            name: None,
        });
    }
    save_manifest(a.out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let config = ExperimentConfig::load(&a.scenario, a.config.as_deref())?;
    let report = run_experiment(&config, a.seed)?;
    report.write(&a.out)?;
    eprintln!("{} records written to {}", report.records.len(), a.out.display());
    Ok(())
}
