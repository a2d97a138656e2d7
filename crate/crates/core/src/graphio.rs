//! Graph and collection types, edge-list and manifest ingestion, and dense
//! matrix persistence.
//!
//! Edge lists are UTF-8 text with one `u v` or `u v w` record per line and
//! 0-based vertex indices. Lines starting with `#` are comments, except for
//! the optional headers `# n=<N>` (vertex count) and `# kind=<binary|weighted>`.
//!
//! Matrices are stored as headerless CSV with 17 significant digits, which
//! round-trips every finite `f64` exactly.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Binary,
    Weighted,
    Probability,
}

impl GraphKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphKind::Binary => "binary",
            GraphKind::Weighted => "weighted",
            GraphKind::Probability => "probability",
        }
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A symmetric `n x n` matrix describing one network on vertices `0..n`.
///
/// Binary and weighted graphs are hollow (no self-loops). Probability graphs
/// hold edge probabilities and may carry a non-zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    kind: GraphKind,
    adj: DMatrix<f64>,
}

impl Graph {
    pub fn new(adj: DMatrix<f64>, kind: GraphKind) -> Result<Self> {
        validate(&adj, kind)?;
        Ok(Graph { kind, adj })
    }

    pub fn binary(adj: DMatrix<f64>) -> Result<Self> {
        Self::new(adj, GraphKind::Binary)
    }

    pub fn weighted(adj: DMatrix<f64>) -> Result<Self> {
        Self::new(adj, GraphKind::Weighted)
    }

    pub fn probability(adj: DMatrix<f64>) -> Result<Self> {
        Self::new(adj, GraphKind::Probability)
    }

    /// Skips validation; callers guarantee the invariants by construction.
    pub(crate) fn new_unchecked(adj: DMatrix<f64>, kind: GraphKind) -> Self {
        debug_assert!(validate(&adj, kind).is_ok());
        Graph { kind, adj }
    }

    /// Binary graph from an undirected edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = DMatrix::zeros(n, n);
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {v}) out of range for n = {n}"
                )));
            }
            adj[(u, v)] = 1.0;
            adj[(v, u)] = 1.0;
        }
        Self::binary(adj)
    }

    pub fn n(&self) -> usize {
        self.adj.nrows()
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.adj
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.adj
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.adj[(u, v)]
    }

    /// Number of undirected edges (non-zero upper-triangle entries).
    pub fn edge_count(&self) -> usize {
        let n = self.n();
        (0..n)
            .map(|u| ((u + 1)..n).filter(|&v| self.adj[(u, v)] != 0.0).count())
            .sum()
    }
}

impl AsRef<DMatrix<f64>> for Graph {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.adj
    }
}

/// Check the invariants of a graph of the given kind. Errors name the first
/// offending index pair.
pub fn validate(adj: &DMatrix<f64>, kind: GraphKind) -> Result<()> {
    let n = adj.nrows();
    if adj.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "adjacency matrix must be square, got {}x{}",
            n,
            adj.ncols()
        )));
    }
    for u in 0..n {
        for v in u..n {
            let x = adj[(u, v)];
            if !x.is_finite() {
                return Err(Error::NonFinite(u, v));
            }
            if x != adj[(v, u)] {
                return Err(Error::Asymmetric(u, v));
            }
            if u == v && kind != GraphKind::Probability && x != 0.0 {
                return Err(Error::NotHollow(u));
            }
            let ok = match kind {
                GraphKind::Binary => x == 0.0 || x == 1.0,
                GraphKind::Weighted => true,
                GraphKind::Probability => (0.0..=1.0).contains(&x),
            };
            if !ok {
                return Err(Error::InvalidEntry {
                    row: u,
                    col: v,
                    value: x,
                    kind: kind.as_str(),
                });
            }
        }
    }
    Ok(())
}

/// `m` vertex-aligned graphs with optional per-graph labels and names.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphCollection {
    graphs: Vec<Graph>,
    labels: Option<Vec<String>>,
    names: Option<Vec<String>>,
}

impl GraphCollection {
    pub fn new(graphs: Vec<Graph>) -> Result<Self> {
        if let Some(first) = graphs.first() {
            let n = first.n();
            if let Some(bad) = graphs.iter().find(|g| g.n() != n) {
                return Err(Error::MismatchedVertexCount {
                    expected: n,
                    found: bad.n(),
                });
            }
        }
        Ok(GraphCollection {
            graphs,
            labels: None,
            names: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.graphs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} graphs",
                labels.len(),
                self.graphs.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.graphs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} names for {} graphs",
                names.len(),
                self.graphs.len()
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    /// Number of graphs.
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Shared vertex count (0 for an empty collection).
    pub fn n(&self) -> usize {
        self.graphs.first().map_or(0, Graph::n)
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }
}

// ---------------------------------------------------------------------------
// Edge lists

/// Read an edge list. `n` overrides any `# n=` header; without either the
/// vertex count is one more than the largest index seen.
pub fn load_edge_list(path: impl AsRef<Path>, n: Option<usize>) -> Result<Graph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text, path, n)
}

pub fn parse_edge_list(text: &str, path: &Path, n: Option<usize>) -> Result<Graph> {
    let mut header_n = None;
    let mut header_kind = None;
    let mut records: Vec<(usize, usize, usize, Option<f64>)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(v) = comment.strip_prefix("n=") {
                let v = v.trim().parse::<usize>().map_err(|_| {
                    Error::parse(path, lineno, format!("bad vertex-count header `{line}`"))
                })?;
                header_n = Some(v);
            } else if let Some(k) = comment.strip_prefix("kind=") {
                header_kind = Some(match k.trim() {
                    "binary" => GraphKind::Binary,
                    "weighted" => GraphKind::Weighted,
                    other => {
                        return Err(Error::parse(
                            path,
                            lineno,
                            format!("unsupported graph kind `{other}`"),
                        ))
                    }
                });
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected `u v [w]`, got `{line}`"),
            ));
        }
        let idx = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(path, lineno, format!("bad vertex index `{s}`")))
        };
        let u = idx(fields[0])?;
        let v = idx(fields[1])?;
        let w = match fields.get(2) {
            Some(s) => {
                let w = s
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, format!("bad weight `{s}`")))?;
                if !w.is_finite() {
                    return Err(Error::parse(path, lineno, format!("non-finite weight `{s}`")));
                }
                Some(w)
            }
            None => None,
        };
        records.push((lineno, u, v, w));
    }

    let n = match n.or(header_n) {
        Some(n) => n,
        None => match records.iter().map(|r| r.1.max(r.2)).max() {
            Some(max) => max + 1,
            None => {
                return Err(Error::parse(
                    path,
                    0,
                    "empty edge list without a vertex count",
                ))
            }
        },
    };
    let kind = header_kind.unwrap_or(if records.iter().any(|r| r.3.is_some()) {
        GraphKind::Weighted
    } else {
        GraphKind::Binary
    });

    let mut adj = DMatrix::zeros(n, n);
    let mut seen = HashSet::with_capacity(records.len());
    for (lineno, u, v, w) in records {
        if u >= n || v >= n {
            return Err(Error::parse(
                path,
                lineno,
                format!("vertex index {} out of range for n = {n}", u.max(v)),
            ));
        }
        if u == v {
            return Err(Error::parse(path, lineno, format!("self-loop on vertex {u}")));
        }
        if !seen.insert((u.min(v), u.max(v))) {
            return Err(Error::parse(path, lineno, format!("duplicate edge ({u}, {v})")));
        }
        let w = w.unwrap_or(1.0);
        if kind == GraphKind::Binary && w != 1.0 && w != 0.0 {
            return Err(Error::parse(
                path,
                lineno,
                format!("weight {w} in a binary edge list"),
            ));
        }
        adj[(u, v)] = w;
        adj[(v, u)] = w;
    }
    Ok(Graph::new_unchecked(adj, kind))
}

/// Write a binary or weighted graph as an edge list with `# n=` and
/// `# kind=` headers.
pub fn save_edge_list(path: impl AsRef<Path>, graph: &Graph) -> Result<()> {
    let path = path.as_ref();
    if graph.kind() == GraphKind::Probability {
        return Err(Error::InvalidArgument(
            "probability matrices are persisted with save_matrix".into(),
        ));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let n = graph.n();
    let io = |e| Error::io(path, e);
    writeln!(out, "# n={n}").map_err(io)?;
    writeln!(out, "# kind={}", graph.kind()).map_err(io)?;
    for u in 0..n {
        for v in (u + 1)..n {
            let w = graph.get(u, v);
            if w == 0.0 {
                continue;
            }
            match graph.kind() {
                GraphKind::Binary => writeln!(out, "{u} {v}"),
                _ => writeln!(out, "{u} {v} {}", fmt_f64(w)),
            }
            .map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

// ---------------------------------------------------------------------------
// Manifests

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub graphs: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

/// Load every graph listed in a manifest, in order.
///
/// The manifest is either a JSON object `{"graphs": [{"path": .., "label": ..}]}`
/// or plain text with one path per line. Relative paths are resolved against
/// the manifest's directory.
pub fn load_collection(manifest: impl AsRef<Path>) -> Result<GraphCollection> {
    let manifest = manifest.as_ref();
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let entries = if text.trim_start().starts_with('{') {
        serde_json::from_str::<Manifest>(&text)
            .map_err(|source| Error::Json {
                path: manifest.to_path_buf(),
                source,
            })?
            .graphs
    } else {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| ManifestEntry {
                path: PathBuf::from(l),
                label: None,
                name: None,
            })
            .collect()
    };

    let base = manifest.parent().unwrap_or_else(|| Path::new(""));
    let mut graphs = Vec::with_capacity(entries.len());
    let mut names = Vec::with_capacity(entries.len());
    for entry in &entries {
        let path = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            base.join(&entry.path)
        };
        graphs.push(load_edge_list(&path, None)?);
        names.push(entry.name.clone().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        }));
    }

    let labelled = entries.iter().filter(|e| e.label.is_some()).count();
    let mut collection = GraphCollection::new(graphs)?.with_names(names)?;
    if labelled == entries.len() && labelled > 0 {
        collection =
            collection.with_labels(entries.into_iter().filter_map(|e| e.label).collect())?;
    } else if labelled > 0 {
        return Err(Error::InvalidArgument(format!(
            "manifest {} labels only {labelled} of {} graphs",
            manifest.display(),
            entries.len()
        )));
    }
    Ok(collection)
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_text(path, &(text + "\n"))
}

// ---------------------------------------------------------------------------
// Dense matrices

/// 17 significant digits in scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn save_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    if let Some((i, j)) = first_non_finite(m) {
        return Err(Error::NonFinite(i, j));
    }
    let mut text = String::with_capacity(m.len() * 24);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                text.push(',');
            }
            text.push_str(&fmt_f64(m[(i, j)]));
        }
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                let s = s.trim();
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::parse(path, lineno + 1, format!("bad number `{s}`"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

pub(crate) fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_text(path, &(text + "\n"))
}
