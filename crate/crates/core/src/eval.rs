//! Downstream evaluation: k-means clustering metrics and link prediction.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{write_edges, AttributedGraph, Edge};
use crate::similarity::t_kernel;
use crate::trainer::{train, TrainConfig};

const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding.
fn seed_centroids(z: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = z.nrows();
    let mut c = Array2::zeros((k, z.ncols()));
    c.row_mut(0).assign(&z.row(rng.random_range(0..n)));
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), c.row(0))).collect();
    for m in 1..k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in best.iter().enumerate() {
                if t < w {
                    idx = i;
                    break;
                }
                t -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        c.row_mut(m).assign(&z.row(pick));
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(sq_dist(z.row(i), c.row(m)));
        }
    }
    c
}

fn lloyd(z: &Array2<f64>, mut c: Array2<f64>) -> KMeans {
    let (n, k) = (z.nrows(), c.nrows());
    let mut assignment = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for i in 0..n {
            let (mut arg, mut best) = (0, f64::INFINITY);
            for m in 0..k {
                let d = sq_dist(z.row(i), c.row(m));
                if d < best {
                    best = d;
                    arg = m;
                }
            }
            dist[i] = best;
            if assignment[i] != arg {
                assignment[i] = arg;
                changed = true;
            }
        }
        let mut sums = Array2::<f64>::zeros(c.raw_dim());
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let mut row = sums.row_mut(assignment[i]);
            row += &z.row(i);
            counts[assignment[i]] += 1;
        }
        for m in 0..k {
            if counts[m] > 0 {
                c.row_mut(m).assign(&(&sums.row(m) / counts[m] as f64));
            } else {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                c.row_mut(m).assign(&z.row(far));
                dist[far] = 0.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = (0..n).map(|i| sq_dist(z.row(i), c.row(assignment[i]))).sum();
    KMeans {
        assignment,
        centroids: c,
        inertia,
    }
}

/// Lloyd's algorithm with k-means++ seeding; the lowest-inertia run over
/// `restarts` is returned. Deterministic in `seed`.
pub fn kmeans(z: &Array2<f64>, k: usize, seed: u64, restarts: usize) -> Result<KMeans> {
    let n = z.nrows();
    if k == 0 || k > n {
        return Err(Error::Eval(format!("k = {k} must lie in 1..={n}")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eval("embedding contains non-finite values".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(z, seed_centroids(z, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Variant {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringMetrics {
    pub acc: f64,
    pub nmi: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringReport {
    pub acc: f64,
    pub nmi: f64,
    pub f1: f64,
    pub seed: u64,
    pub assignment: Vec<usize>,
}

fn compact(ids: &[usize]) -> (Vec<usize>, usize) {
    let mut seen: Vec<usize> = ids.to_vec();
    seen.sort_unstable();
    seen.dedup();
    let out = ids.iter().map(|v| seen.binary_search(v).unwrap()).collect();
    (out, seen.len())
}

fn contingency(pred: &[usize], kp: usize, truth: &[usize], kt: usize) -> Vec<Vec<usize>> {
    let mut t = vec![vec![0usize; kt]; kp];
    for (&p, &c) in pred.iter().zip(truth) {
        t[p][c] += 1;
    }
    t
}

/// Maximum-weight matching from predicted clusters to classes; entry `p`
/// is the class matched to cluster `p`, if any.
fn match_clusters(table: &[Vec<usize>], kp: usize, kt: usize) -> Vec<Option<usize>> {
    let size = kp.max(kt);
    let mut w = vec![0i64; size * size];
    for p in 0..kp {
        for c in 0..kt {
            w[p * size + c] = table[p][c] as i64;
        }
    }
    let m = Matrix::from_vec(size, size, w).expect("square matrix");
    let (_, cols) = kuhn_munkres(&m);
    (0..kp).map(|p| Some(cols[p]).filter(|&c| c < kt)).collect()
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// ACC after optimal matching, NMI with arithmetic-mean normalization, and
/// F1 after the same matching.
pub fn clustering_metrics(pred: &[usize], truth: &[usize], f1: F1Variant) -> Result<ClusteringMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len();
    if n < 2 {
        return Err(Error::Eval(format!("need at least 2 points, got {n}")));
    }
    let (pred, kp) = compact(pred);
    let (truth, kt) = compact(truth);
    let table = contingency(&pred, kp, &truth, kt);
    let matching = match_clusters(&table, kp, kt);
    let hits: usize = matching
        .iter()
        .enumerate()
        .filter_map(|(p, c)| c.map(|c| table[p][c]))
        .sum();
    let acc = hits as f64 / n as f64;

    let nf = n as f64;
    let row: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<usize> = (0..kt).map(|c| table.iter().map(|r| r[c]).sum()).collect();
    let mut mi = 0.0;
    for p in 0..kp {
        for c in 0..kt {
            let nij = table[p][c];
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / nf * (nf * nij / (row[p] as f64 * col[c] as f64)).ln();
            }
        }
    }
    let (hp, ht) = (entropy(row.iter().copied(), nf), entropy(col.iter().copied(), nf));
    let nmi = if hp + ht == 0.0 {
        1.0
    } else {
        (mi / (0.5 * (hp + ht))).clamp(0.0, 1.0)
    };

    let f1 = match f1 {
        F1Variant::Micro => acc,
        F1Variant::Macro => {
            let mut class_to_cluster = vec![None; kt];
            for (p, c) in matching.iter().enumerate() {
                if let Some(c) = c {
                    class_to_cluster[*c] = Some(p);
                }
            }
            let sum: f64 = (0..kt)
                .map(|c| match class_to_cluster[c] {
                    Some(p) if table[p][c] > 0 => {
                        let tp = table[p][c] as f64;
                        let precision = tp / row[p] as f64;
                        let recall = tp / col[c] as f64;
                        2.0 * precision * recall / (precision + recall)
                    }
                    _ => 0.0,
                })
                .sum();
            sum / kt as f64
        }
    };
    Ok(ClusteringMetrics { acc, nmi, f1 })
}

/// k-means with `k` = number of classes, then clustering metrics.
pub fn evaluate_clustering(
    z: &Array2<f64>,
    labels: &[usize],
    seed: u64,
    restarts: usize,
    f1: F1Variant,
) -> Result<ClusteringReport> {
    if z.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} embedding rows for {} labels",
            z.nrows(),
            labels.len()
        )));
    }
    let k = compact(labels).1;
    let km = kmeans(z, k, seed, restarts)?;
    let m = clustering_metrics(&km.assignment, labels, f1)?;
    Ok(ClusteringReport {
        acc: m.acc,
        nmi: m.nmi,
        f1: m.f1,
        seed,
        assignment: km.assignment,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkPredSplit {
    pub train_edges: Vec<Edge>,
    pub val_edges: Vec<Edge>,
    pub test_edges: Vec<Edge>,
    pub val_negatives: Vec<Edge>,
    pub test_negatives: Vec<Edge>,
    pub seed: u64,
}

impl LinkPredSplit {
    /// Writes one edge-list file per part into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, edges) in [
            ("train.edges", &self.train_edges),
            ("val.edges", &self.val_edges),
            ("test.edges", &self.test_edges),
            ("val_negatives.edges", &self.val_negatives),
            ("test_negatives.edges", &self.test_negatives),
        ] {
            write_edges(&dir.join(name), edges)?;
        }
        Ok(())
    }
}

pub const VAL_FRACTION: f64 = 0.05;
pub const TEST_FRACTION: f64 = 0.10;

/// Holds out 5% / 10% of the edges (rounded down) plus equally many
/// non-edges for validation and test.
pub fn linkpred_split(g: &AttributedGraph, seed: u64) -> Result<LinkPredSplit> {
    let m = g.edges().len();
    if m < 20 {
        return Err(Error::Eval(format!("link prediction needs at least 20 edges, got {m}")));
    }
    let n_val = (m as f64 * VAL_FRACTION).floor() as usize;
    let n_test = (m as f64 * TEST_FRACTION).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = g.edges().to_vec();
    edges.shuffle(&mut rng);
    let mut val_edges = edges[..n_val].to_vec();
    let mut test_edges = edges[n_val..n_val + n_test].to_vec();
    let mut train_edges = edges[n_val + n_test..].to_vec();

    let n = g.n();
    let need = n_val + n_test;
    let non_edges = n * (n - 1) / 2 - m;
    if non_edges < need {
        return Err(Error::Eval(format!(
            "only {non_edges} non-edges available for {need} negatives"
        )));
    }
    let negatives: Vec<Edge> = if need * 2 <= non_edges {
        let mut seen = HashSet::with_capacity(need);
        let mut out = Vec::with_capacity(need);
        while out.len() < need {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let e = (a.min(b), a.max(b));
            if !g.has_edge(e.0, e.1) && seen.insert(e) {
                out.push(e);
            }
        }
        out
    } else {
        let all: Vec<Edge> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| !g.has_edge(i, j))
            .collect();
        sample(&mut rng, all.len(), need)
            .into_iter()
            .map(|k| all[k])
            .collect()
    };
    let mut val_negatives = negatives[..n_val].to_vec();
    let mut test_negatives = negatives[n_val..].to_vec();
    for v in [
        &mut train_edges,
        &mut val_edges,
        &mut test_edges,
        &mut val_negatives,
        &mut test_negatives,
    ] {
        v.sort_unstable();
    }
    Ok(LinkPredSplit {
        train_edges,
        val_edges,
        test_edges,
        val_negatives,
        test_negatives,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scorer {
    Cosine,
    TKernel { nu: f64 },
}

/// Edge likelihood score; higher means more likely an edge.
pub fn edge_score(z: &Array2<f64>, i: usize, j: usize, scorer: Scorer) -> f64 {
    let (a, b) = (z.row(i), z.row(j));
    match scorer {
        Scorer::Cosine => {
            let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                a.dot(&b) / (na * nb)
            }
        }
        Scorer::TKernel { nu } => t_kernel(sq_dist(a, b).sqrt(), nu),
    }
}

pub fn score_edges(z: &Array2<f64>, edges: &[Edge], scorer: Scorer) -> Vec<f64> {
    edges.iter().map(|&(i, j)| edge_score(z, i, j, scorer)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkPredReport {
    pub auc: f64,
    pub ap: f64,
    pub seed: u64,
}

/// ROC AUC by the rank statistic (ties count one half) and average precision
/// by step interpolation over descending score thresholds.
pub fn auc_ap(pos: &[f64], neg: &[f64]) -> Result<(f64, f64)> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Eval("auc/ap need positive and negative scores".into()));
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(Error::Eval("scores contain NaN".into()));
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (pos.len() as f64, neg.len() as f64);

    // Walk tied groups in descending order.
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut auc_pairs = 0.0;
    let mut ap = 0.0;
    let mut k = 0;
    while k < all.len() {
        let mut end = k;
        let (mut gp, mut gn) = (0.0, 0.0);
        while end < all.len() && all[end].0 == all[k].0 {
            if all[end].1 {
                gp += 1.0;
            } else {
                gn += 1.0;
            }
            end += 1;
        }
        // Negatives here lose to every earlier positive and tie with this
        // group's positives.
        auc_pairs += gn * tp + 0.5 * gp * gn;
        tp += gp;
        fp += gn;
        if gp > 0.0 {
            ap += (gp / np) * (tp / (tp + fp));
        }
        k = end;
    }
    Ok((auc_pairs / (np * nn), ap))
}

/// Held-out scores for one link-prediction seed.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkPredOutcome {
    pub test: LinkPredReport,
    pub val_auc: f64,
    pub val_ap: f64,
    pub split: LinkPredSplit,
    pub embeddings: Array2<f64>,
}

/// The graph the model may see: all nodes, training edges only.
pub fn split_graph(g: &AttributedGraph, split: &LinkPredSplit) -> Result<AttributedGraph> {
    g.with_edges(split.train_edges.iter().copied())
}

/// Splits with `seed`, trains on the training edges (model seed `seed`) and
/// scores the held-out positives against the sampled negatives.
pub fn run_linkpred(
    g: &AttributedGraph,
    cfg: &TrainConfig,
    seed: u64,
    scorer: Scorer,
    cache_dir: Option<&Path>,
) -> Result<LinkPredOutcome> {
    let split = linkpred_split(g, seed)?;
    let tg = split_graph(g, &split)?;
    let cfg = TrainConfig { seed, ..cfg.clone() };
    let z = train(&tg, &cfg, cache_dir)?.embeddings;
    let (auc, ap) = auc_ap(
        &score_edges(&z, &split.test_edges, scorer),
        &score_edges(&z, &split.test_negatives, scorer),
    )?;
    let (val_auc, val_ap) = auc_ap(
        &score_edges(&z, &split.val_edges, scorer),
        &score_edges(&z, &split.val_negatives, scorer),
    )?;
    Ok(LinkPredOutcome {
        test: LinkPredReport { auc, ap, seed },
        val_auc,
        val_ap,
        split,
        embeddings: z,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
