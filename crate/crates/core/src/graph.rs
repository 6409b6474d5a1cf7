//! Attributed graph model, text-file ingestion, adjacency and hop indices,
//! and k-nearest-neighbor graph construction.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::distance::{pairwise_distance, DistanceMetric};
use crate::error::{Error, Result};

/// Undirected edge stored with the smaller endpoint first.
pub type Edge = (usize, usize);

/// Nodes `0..n`, an undirected edge set, a dense `n x d` feature matrix and
/// optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedGraph {
    n: usize,
    edges: Vec<Edge>,
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
}

impl AttributedGraph {
    /// Builds a validated graph. Edge pairs may come in either orientation and
    /// may repeat; they are canonicalized and deduplicated. Self-loops and
    /// out-of-range endpoints are rejected.
    pub fn new(
        features: Array2<f64>,
        edges: impl IntoIterator<Item = Edge>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = features.nrows();
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop on node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::Dimension(format!(
                    "edge ({a}, {b}) references a node outside 0..{n}"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        if let Some(l) = &labels {
            validate_labels(l, n)?;
        }
        Ok(Self {
            n,
            edges: set.into_iter().collect(),
            features,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Canonical `(i, j)` pairs with `i < j`, sorted.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges
            .binary_search(&(i.min(j), i.max(j)))
            .is_ok()
    }

    /// Same nodes, features and labels with a different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        Self::new(self.features.clone(), edges, self.labels.clone())
    }

    /// Scales every feature row to unit euclidean norm. Zero rows are left alone.
    pub fn row_normalized(&self) -> Self {
        let mut out = self.clone();
        for mut row in out.features.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
        out
    }
}

fn validate_labels(labels: &[usize], n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for {n} nodes",
            labels.len()
        )));
    }
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    if let Some(&max) = classes.iter().next_back() {
        if max + 1 != classes.len() {
            return Err(Error::Label(format!(
                "class ids must be contiguous from 0; found {} distinct ids with max {max}",
                classes.len()
            )));
        }
    }
    Ok(())
}

/// Symmetric 0/1 adjacency with zero diagonal, stored as sorted neighbor rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    rows: Vec<Vec<usize>>,
}

impl AdjacencyMatrix {
    pub fn from_edges(n: usize, edges: &[Edge]) -> Self {
        let mut rows = vec![Vec::new(); n];
        for &(i, j) in edges {
            rows[i].push(j);
            rows[j].push(i);
        }
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
        }
        Self { rows }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.rows[i].len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.rows[i].binary_search(&j).is_ok()
    }

    pub fn num_edges(&self) -> usize {
        self.rows.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut a = Array2::zeros((n, n));
        for (i, r) in self.rows.iter().enumerate() {
            for &j in r {
                a[[i, j]] = 1.0;
            }
        }
        a
    }
}

pub fn adjacency(g: &AttributedGraph) -> AdjacencyMatrix {
    AdjacencyMatrix::from_edges(g.n(), g.edges())
}

/// Hop-1 neighbors and exactly-2-hop neighbors of every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodIndex {
    pub hop1: Vec<Vec<usize>>,
    pub hop2: Vec<Vec<usize>>,
}

impl NeighborhoodIndex {
    /// Unordered `(i, j)` pairs, `i < j`, at graph distance exactly two.
    pub fn hop2_pairs(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for (i, h) in self.hop2.iter().enumerate() {
            out.extend(h.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }
}

pub fn hop_neighborhoods(g: &AttributedGraph) -> NeighborhoodIndex {
    let adj = adjacency(g);
    let n = g.n();
    let hop1: Vec<Vec<usize>> = (0..n).map(|i| adj.neighbors(i).to_vec()).collect();
    let mut hop2 = Vec::with_capacity(n);
    let mut mark = vec![usize::MAX; n];
    for i in 0..n {
        mark[i] = i;
        for &k in &hop1[i] {
            mark[k] = i;
        }
        let mut h = Vec::new();
        for &k in &hop1[i] {
            for &j in &hop1[k] {
                if mark[j] != i {
                    mark[j] = i;
                    h.push(j);
                }
            }
        }
        h.sort_unstable();
        hop2.push(h);
    }
    NeighborhoodIndex { hop1, hop2 }
}

/// Indices of the `k` nearest rows to row `i` under `dist`, ties broken by
/// smaller index.
fn top_k(dist: &Array2<f64>, i: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dist.nrows()).filter(|&j| j != i).collect();
    order.sort_by(|&a, &b| dist[[i, a]].total_cmp(&dist[[i, b]]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// k-nearest-neighbor graph over the feature rows, symmetrized by union.
pub fn knn_graph(
    features: &Array2<f64>,
    k: usize,
    metric: DistanceMetric,
) -> Result<AttributedGraph> {
    let n = features.nrows();
    if k == 0 || k >= n {
        return Err(Error::Config(format!(
            "knn k must satisfy 0 < k < n (k = {k}, n = {n})"
        )));
    }
    let dist = pairwise_distance(features, metric);
    let edges: Vec<Edge> = (0..n)
        .flat_map(|i| top_k(&dist, i, k).into_iter().map(move |j| (i, j)))
        .collect();
    AttributedGraph::new(features.clone(), edges, None)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses an edge list: two whitespace-separated node ids per line.
pub fn read_edges(path: &Path) -> Result<Vec<Edge>> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    for (no, line) in content_lines(&text) {
        let mut it = line.split_whitespace();
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(parse_err(path, no, "expected two node ids")),
        };
        let a: usize = a
            .parse()
            .map_err(|_| parse_err(path, no, format!("bad node id {a:?}")))?;
        let b: usize = b
            .parse()
            .map_err(|_| parse_err(path, no, format!("bad node id {b:?}")))?;
        if a == b {
            return Err(parse_err(path, no, format!("self-loop on node {a}")));
        }
        edges.push((a, b));
    }
    Ok(edges)
}

fn is_triplet_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("coo") | Some("triplets")
    )
}

/// Reads a feature matrix. Files ending in `.coo` or `.triplets` hold sparse
/// `row col value` lines; anything else is a dense whitespace-separated matrix
/// with one node per line.
pub fn read_features(path: &Path) -> Result<Array2<f64>> {
    let text = read_text(path)?;
    if is_triplet_path(path) {
        let mut entries = Vec::new();
        let (mut rows, mut cols) = (0usize, 0usize);
        for (no, line) in content_lines(&text) {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(parse_err(path, no, "expected `row col value`"));
            }
            let i: usize = parts[0]
                .parse()
                .map_err(|_| parse_err(path, no, "bad row index"))?;
            let j: usize = parts[1]
                .parse()
                .map_err(|_| parse_err(path, no, "bad column index"))?;
            let v: f64 = parts[2]
                .parse()
                .map_err(|_| parse_err(path, no, "bad value"))?;
            if !v.is_finite() {
                return Err(parse_err(path, no, "non-finite value"));
            }
            rows = rows.max(i + 1);
            cols = cols.max(j + 1);
            entries.push((i, j, v));
        }
        let mut x = Array2::zeros((rows, cols));
        for (i, j, v) in entries {
            x[[i, j]] += v;
        }
        return Ok(x);
    }

    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (no, line) in content_lines(&text) {
        let start = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(path, no, format!("bad number {tok:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, no, "non-finite value"));
            }
            data.push(v);
        }
        let w = data.len() - start;
        match width {
            None => width = Some(w),
            Some(expected) if expected != w => {
                return Err(parse_err(
                    path,
                    no,
                    format!("row has {w} values, expected {expected}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let width = width.unwrap_or(0);
    Array2::from_shape_vec((rows, width), data)
        .map_err(|e| Error::Dimension(format!("{}: {e}", path.display())))
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    content_lines(&text)
        .map(|(no, line)| {
            line.parse::<usize>()
                .map_err(|_| parse_err(path, no, format!("bad label {line:?}")))
        })
        .collect()
}

/// Loads and validates an attributed graph from its edge, feature and
/// optional label files. The node count is the feature row count.
pub fn load_graph(
    edge_path: &Path,
    feature_path: &Path,
    label_path: Option<&Path>,
) -> Result<AttributedGraph> {
    let edges = read_edges(edge_path)?;
    let features = read_features(feature_path)?;
    let n = features.nrows();
    if let Some(max_id) = edges.iter().map(|&(a, b)| a.max(b)).max() {
        if max_id >= n {
            return Err(Error::Dimension(format!(
                "{} has {n} feature rows but {} references node {max_id}",
                feature_path.display(),
                edge_path.display()
            )));
        }
    }
    let labels = label_path.map(read_labels).transpose()?;
    if let (Some(l), Some(p)) = (&labels, label_path) {
        if l.len() != n {
            return Err(Error::Dimension(format!(
                "{} has {} labels for {n} nodes",
                p.display(),
                l.len()
            )));
        }
    }
    AttributedGraph::new(features, edges, labels)
}

/// Mapping between arbitrary external node ids and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    raw: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    /// Returns the dense index for `raw`, assigning the next one if unseen.
    pub fn intern(&mut self, raw: &str) -> usize {
        if let Some(&i) = self.index.get(raw) {
            return i;
        }
        let i = self.raw.len();
        self.raw.push(raw.to_string());
        self.index.insert(raw.to_string(), i);
        i
    }

    pub fn get(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn raw_id(&self, dense: usize) -> Option<&str> {
        self.raw.get(dense).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Writes `raw_id<TAB>dense_id` lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for (i, r) in self.raw.iter().enumerate() {
            s.push_str(&format!("{r}\t{i}\n"));
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut map = IdMap::default();
        for (no, line) in content_lines(&text) {
            let (raw, dense) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(path, no, "expected `raw<TAB>dense`"))?;
            let dense: usize = dense
                .trim()
                .parse()
                .map_err(|_| parse_err(path, no, "bad dense id"))?;
            if dense != map.len() {
                return Err(parse_err(path, no, "dense ids must be consecutive"));
            }
            map.intern(raw);
        }
        Ok(map)
    }
}

/// Rewrites an edge file with arbitrary string ids into dense ids, returning
/// the remapped edges and the id map that produced them.
pub fn remap_edge_file(path: &Path) -> Result<(Vec<Edge>, IdMap)> {
    let text = read_text(path)?;
    let mut map = IdMap::default();
    let mut edges = Vec::new();
    for (no, line) in content_lines(&text) {
        let mut it = line.split_whitespace();
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(parse_err(path, no, "expected two node ids")),
        };
        if a == b {
            return Err(parse_err(path, no, format!("self-loop on node {a}")));
        }
        edges.push((map.intern(a), map.intern(b)));
    }
    Ok((edges, map))
}

/// Writes an edge list, one `i j` pair per line.
pub fn write_edges(path: &Path, edges: &[Edge]) -> Result<()> {
    let mut s = String::with_capacity(edges.len() * 12);
    for (a, b) in edges {
        s.push_str(&format!("{a} {b}\n"));
    }
    fs::write(path, s).map_err(|e| Error::io(PathBuf::from(path), e))
}

/// Dense feature matrix, one node per line, full round-trip precision.
pub fn write_features(path: &Path, x: &Array2<f64>) -> Result<()> {
    let mut s = String::with_capacity(x.len() * 12);
    for row in x.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(PathBuf::from(path), e))
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let s: String = labels.iter().map(|l| format!("{l}\n")).collect();
    fs::write(path, s).map_err(|e| Error::io(PathBuf::from(path), e))
}
