use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SBM: &str = r#"{
  "z": [0,0,0,0,0,0,0,0,1,1,1,1,1,1,1,1,0,0,0,0,1,1,1,1],
  "B": [[[0.8,0.1],[0.1,0.7]], [[0.6,0.2],[0.2,0.8]], [[0.8,0.1],[0.1,0.7]], [[0.7,0.15],[0.15,0.6]]]
}"#;

fn cosie(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_cosie"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "cosie {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn sampled(dir: &Path) -> std::path::PathBuf {
    let params = dir.join("sbm.json");
    fs::write(&params, SBM).unwrap();
    let out = dir.join("sample");
    cosie(&["sample", "--sbm", p(&params), "--seed", "9", "--out", p(&out)]);
    out.join("manifest.json")
}

#[test]
fn sample_embed_cluster_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = sampled(dir.path());
    let emb = dir.path().join("emb");
    cosie(&["embed", "--manifest", p(&manifest), "--d", "2", "--di", "2", "--out", p(&emb)]);
    for f in ["V.csv", "R_1.csv", "R_4.csv", "dims.json"] {
        assert!(emb.join(f).exists(), "{f}");
    }
    let z = dir.path().join("z.json");
    fs::write(&z, "[0,0,0,0,0,0,0,0,1,1,1,1,1,1,1,1,0,0,0,0,1,1,1,1]").unwrap();
    let out = cosie(&["cluster", "--embedding", p(&emb), "--k", "2", "--seed", "1", "--reference", p(&z)]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["assignment"].as_array().unwrap().len(), 24);
    assert_eq!(v["misclustered"], 0);
}

#[test]
fn other_embeddings_and_dimension_selection() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = sampled(dir.path());
    let omni = dir.path().join("omni");
    cosie(&["embed", "--manifest", p(&manifest), "--method", "omni", "--d", "2", "--out", p(&omni)]);
    assert!(omni.join("X_4.csv").exists());
    let mean = dir.path().join("mean");
    cosie(&["embed", "--manifest", p(&manifest), "--method", "mean-ase", "--d", "2", "--out", p(&mean)]);
    assert!(mean.join("V.csv").exists());

    let graph = manifest.parent().unwrap().join("graph_1.txt");
    let out = cosie(&["select-dim", "--graph", p(&graph)]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("d="));
    assert_eq!(lines.next(), Some("rank,value"));
    assert_eq!(lines.count(), 24);
}

#[test]
fn failures_exit_non_zero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cosie"))
        .args(["experiment", "--scenario", "nope", "--out", p(dir.path())])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario"));

    let out = Command::new(env!("CARGO_BIN_EXE_cosie"))
        .args(["embed", "--manifest", "/does/not/exist.json", "--out", p(dir.path())])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn test_and_analyze_commands() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = sampled(dir.path());
    // attach labels so that analyze can cross-validate
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    for (i, g) in m["graphs"].as_array_mut().unwrap().iter_mut().enumerate() {
        g["label"] = serde_json::json!(if i % 2 == 0 { "a" } else { "b" });
    }
    fs::write(&manifest, serde_json::to_string(&m).unwrap()).unwrap();

    let pv = dir.path().join("pvals.csv");
    cosie(&["test", "--manifest", p(&manifest), "--method", "asymptotic", "--d", "2", "--reps", "200", "--out", p(&pv)]);
    let rows: Vec<Vec<f64>> = fs::read_to_string(&pv)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for i in 0..4 {
        assert_eq!(rows[i][i], 1.0);
        for j in 0..4 {
            assert_eq!(rows[i][j], rows[j][i]);
            assert!(rows[i][j] > 0.0 && rows[i][j] <= 1.0);
        }
    }

    let emb = dir.path().join("emb");
    cosie(&["embed", "--manifest", p(&manifest), "--d", "2", "--di", "2", "--out", p(&emb)]);
    let an = dir.path().join("an");
    cosie(&["analyze", "--embedding", p(&emb), "--manifest", p(&manifest), "--folds", "2", "--out", p(&an)]);
    for f in ["distances.csv", "cmds.csv", "classification.json"] {
        assert!(an.join(f).exists(), "{f}");
    }
}

#[test]
fn experiment_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"n": 40, "per_class": 1, "alpha_grid": [0.0, 1.5], "replicates": 2}"#).unwrap();
    let out = dir.path().join("out");
    cosie(&["experiment", "--scenario", "classification", "--config", p(&cfg), "--seed", "5", "--out", p(&out)]);
    let raw = fs::read_to_string(out.join("raw.csv")).unwrap();
    assert!(raw.starts_with("point,label,x,replicate,method,metric,value\n"));
    // 2 points x 2 replicates x 2 methods
    assert_eq!(raw.lines().count(), 1 + 8);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);
    let echo: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("config_echo.json")).unwrap()).unwrap();
    assert_eq!(echo["scenario"], "classification");
    assert_eq!(echo["config"]["n"], 40);
    assert_eq!(echo["config"]["d"], 2);
}
