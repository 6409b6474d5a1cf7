//! Feature-space distances and graph geodesic distance matrices.
//!
//! Geodesic distances run Dijkstra from every source over the given edge set,
//! weighting each edge by the feature distance of its endpoints. Pairs with no
//! connecting path are assigned `lambda` times the largest connected distance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::graph::{adjacency, AttributedGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    Euclidean,
    Manhattan,
    /// `1 - cos(x, y)`. A zero-norm row is at distance 1 from every other row.
    Cosine,
}

impl DistanceMetric {
    /// Whether the metric obeys the triangle inequality, so that the direct
    /// distance is already the shortest path on a complete graph.
    pub fn is_metric(self) -> bool {
        !matches!(self, DistanceMetric::Cosine)
    }

    pub fn distance(self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        match self {
            DistanceMetric::Euclidean => x
                .iter()
                .zip(y.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
            DistanceMetric::Manhattan => x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).sum(),
            DistanceMetric::Cosine => {
                let nx = x.dot(&x).sqrt();
                let ny = y.dot(&y).sqrt();
                if nx == 0.0 || ny == 0.0 {
                    1.0
                } else {
                    (1.0 - x.dot(&y) / (nx * ny)).max(0.0)
                }
            }
        }
    }
}

/// How a path's length is measured when computing geodesics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathWeighting {
    /// Each edge costs the feature distance between its endpoints.
    #[default]
    Metric,
    /// Each edge costs 1.
    Hop,
}

/// Symmetric all-pairs distance matrix with zero diagonal.
pub fn pairwise_distance(features: &Array2<f64>, metric: DistanceMetric) -> Array2<f64> {
    let n = features.nrows();
    let mut d = Array2::zeros((n, n));
    if metric == DistanceMetric::Cosine {
        // Norms once, then the dot products.
        let norms: Vec<f64> = features.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let gram = features.dot(&features.t());
        for i in 0..n {
            for j in (i + 1)..n {
                let v = if norms[i] == 0.0 || norms[j] == 0.0 {
                    1.0
                } else {
                    (1.0 - gram[[i, j]] / (norms[i] * norms[j])).max(0.0)
                };
                d[[i, j]] = v;
                d[[j, i]] = v;
            }
        }
        return d;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let v = metric.distance(features.row(i), features.row(j));
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicDistanceMatrix {
    pub matrix: Array2<f64>,
    pub lambda: f64,
    /// Largest shortest-path length over connected pairs.
    pub connected_max: f64,
    /// Set when no pair of distinct nodes is connected.
    pub degenerate: bool,
}

impl GeodesicDistanceMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// The value stored for every unconnected pair.
    pub fn unconnected_value(&self) -> f64 {
        self.lambda * self.connected_max
    }
}

#[derive(Copy, Clone, PartialEq)]
struct State {
    cost: f64,
    node: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest paths over weighted adjacency lists. Unreachable
/// nodes stay at `f64::INFINITY`.
pub(crate) fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(State {
        cost: 0.0,
        node: source,
    });
    while let Some(State { cost, node }) = heap.pop() {
        if cost > dist[node] {
            continue;
        }
        for &(next, w) in &adj[node] {
            let c = cost + w;
            if c < dist[next] {
                dist[next] = c;
                heap.push(State { cost: c, node: next });
            }
        }
    }
    dist
}

/// O(n^2) Dijkstra on a dense weight matrix, used for complete graphs.
fn dense_dijkstra(w: &Array2<f64>, source: usize) -> Vec<f64> {
    let n = w.nrows();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[source] = 0.0;
    for _ in 0..n {
        let mut u = usize::MAX;
        let mut best = f64::INFINITY;
        for v in 0..n {
            if !done[v] && dist[v] < best {
                best = dist[v];
                u = v;
            }
        }
        if u == usize::MAX {
            break;
        }
        done[u] = true;
        let row = w.row(u);
        for v in 0..n {
            if !done[v] {
                let c = best + row[v];
                if c < dist[v] {
                    dist[v] = c;
                }
            }
        }
    }
    dist
}

/// Fills unreachable entries with `lambda * max(connected)`.
pub(crate) fn apply_unconnected_rule(mut m: Array2<f64>, lambda: f64) -> GeodesicDistanceMatrix {
    let n = m.nrows();
    let mut connected_max = 0.0f64;
    let mut any = false;
    for i in 0..n {
        for j in 0..n {
            let v = m[[i, j]];
            if i != j && v.is_finite() {
                any = true;
                connected_max = connected_max.max(v);
            }
        }
    }
    if !any && n > 1 {
        log::warn!("geodesic distances: graph has no connected pairs; all distances are 0");
    }
    let fill = lambda * connected_max;
    m.mapv_inplace(|v| if v.is_finite() { v } else { fill });
    GeodesicDistanceMatrix {
        matrix: m,
        lambda,
        connected_max,
        degenerate: !any && n > 1,
    }
}

pub fn geodesic_distances(
    g: &AttributedGraph,
    metric: DistanceMetric,
    lambda: f64,
) -> GeodesicDistanceMatrix {
    geodesic_distances_weighted(g, metric, lambda, PathWeighting::Metric)
}

pub fn geodesic_distances_weighted(
    g: &AttributedGraph,
    metric: DistanceMetric,
    lambda: f64,
    weighting: PathWeighting,
) -> GeodesicDistanceMatrix {
    apply_unconnected_rule(shortest_paths(g, metric, weighting), lambda)
}

/// All-pairs shortest paths, `inf` for unconnected pairs.
pub(crate) fn shortest_paths(
    g: &AttributedGraph,
    metric: DistanceMetric,
    weighting: PathWeighting,
) -> Array2<f64> {
    let n = g.n();
    let a = adjacency(g);
    let x = g.features();
    let weighted: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            a.neighbors(i)
                .iter()
                .map(|&j| {
                    let w = match weighting {
                        PathWeighting::Metric => metric.distance(x.row(i), x.row(j)),
                        PathWeighting::Hop => 1.0,
                    };
                    (j, w)
                })
                .collect()
        })
        .collect();
    let mut m = Array2::from_elem((n, n), f64::INFINITY);
    for s in 0..n {
        for (t, d) in dijkstra(&weighted, s).into_iter().enumerate() {
            m[[s, t]] = d;
        }
    }
    // Enforce exact symmetry against rounding in differing path sums.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = m[[i, j]].min(m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    m
}

/// Geodesic distances over the complete graph on the same nodes.
pub fn complete_graph_distances(features: &Array2<f64>, metric: DistanceMetric) -> Array2<f64> {
    let direct = pairwise_distance(features, metric);
    if metric.is_metric() {
        return direct;
    }
    let n = features.nrows();
    let mut m = Array2::zeros((n, n));
    for s in 0..n {
        for (t, d) in dense_dijkstra(&direct, s).into_iter().enumerate() {
            m[[s, t]] = d;
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let v = m[[i, j]].min(m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    m
}

/// Complete-graph distances wrapped with their connected max, so they can be
/// fed to the same similarity pipeline as priori-graph geodesics.
pub fn complete_geodesic(
    features: &Array2<f64>,
    metric: DistanceMetric,
    lambda: f64,
) -> GeodesicDistanceMatrix {
    apply_unconnected_rule(complete_graph_distances(features, metric), lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_line(n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, 1), |(i, _)| i as f64)
    }

    #[test]
    fn pairwise_examples() {
        let x = array![[0.0, 0.0], [3.0, 4.0]];
        assert_eq!(pairwise_distance(&x, DistanceMetric::Euclidean)[[0, 1]], 5.0);
        let x = array![[1.0, 2.0], [4.0, 0.0]];
        assert_eq!(pairwise_distance(&x, DistanceMetric::Manhattan)[[0, 1]], 5.0);
        let x = array![[0.3, -1.2, 2.0], [0.3, -1.2, 2.0]];
        assert_abs_diff_eq!(
            pairwise_distance(&x, DistanceMetric::Cosine)[[0, 1]],
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cosine_zero_rows() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]];
        let d = pairwise_distance(&x, DistanceMetric::Cosine);
        assert_eq!(d[[0, 1]], 1.0);
        assert_eq!(d[[0, 2]], 1.0);
        assert_eq!(d[[0, 0]], 0.0);
        assert_eq!(DistanceMetric::Cosine.distance(x.row(0), x.row(1)), 1.0);
    }

    #[test]
    fn path_graph_geodesic() {
        let g = AttributedGraph::new(unit_line(3), [(0, 1), (1, 2)], None).unwrap();
        let d = geodesic_distances(&g, DistanceMetric::Euclidean, 10.0);
        assert_eq!(d.matrix[[0, 2]], 2.0);
        assert_eq!(d.connected_max, 2.0);
    }

    #[test]
    fn disconnected_components_use_lambda_rule() {
        // Two K2 components with unit edges.
        let x = array![[0.0], [1.0], [5.0], [6.0]];
        let g = AttributedGraph::new(x, [(0, 1), (2, 3)], None).unwrap();
        let d = geodesic_distances(&g, DistanceMetric::Euclidean, 10.0);
        assert_eq!(d.matrix[[0, 2]], 10.0);
        assert_eq!(d.matrix[[1, 3]], 10.0);
        assert_eq!(d.matrix[[0, 1]], 1.0);
        assert!(!d.degenerate);
    }

    #[test]
    fn edgeless_graph_is_degenerate() {
        let g = AttributedGraph::new(unit_line(4), [], None).unwrap();
        let d = geodesic_distances(&g, DistanceMetric::Euclidean, 10.0);
        assert!(d.degenerate);
        assert_eq!(d.connected_max, 0.0);
        assert!(d.matrix.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hop_weighting_counts_edges() {
        let x = array![[0.0], [7.0], [7.5]];
        let g = AttributedGraph::new(x, [(0, 1), (1, 2)], None).unwrap();
        let d = geodesic_distances_weighted(&g, DistanceMetric::Euclidean, 10.0, PathWeighting::Hop);
        assert_eq!(d.matrix[[0, 2]], 2.0);
    }

    /// Floyd-Warshall over the same weighted edges.
    fn floyd_warshall(g: &AttributedGraph, metric: DistanceMetric, lambda: f64) -> Array2<f64> {
        let n = g.n();
        let x = g.features();
        let mut d = Array2::from_elem((n, n), f64::INFINITY);
        for i in 0..n {
            d[[i, i]] = 0.0;
        }
        for &(i, j) in g.edges() {
            let w = metric.distance(x.row(i), x.row(j));
            d[[i, j]] = w;
            d[[j, i]] = w;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let c = d[[i, k]] + d[[k, j]];
                    if c < d[[i, j]] {
                        d[[i, j]] = c;
                    }
                }
            }
        }
        let max = d.iter().filter(|v| v.is_finite()).fold(0.0f64, |a, &b| a.max(b));
        d.mapv(|v| if v.is_finite() { v } else { lambda * max })
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> AttributedGraph {
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-2.0..2.0));
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        AttributedGraph::new(x, edges, None).unwrap()
    }

    #[test]
    fn random_weighted_graph_matches_floyd_warshall() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_graph(&mut rng, 15, 0.15);
        for metric in [DistanceMetric::Euclidean, DistanceMetric::Manhattan, DistanceMetric::Cosine] {
            let d = geodesic_distances(&g, metric, 10.0);
            let oracle = floyd_warshall(&g, metric, 10.0);
            for (a, b) in d.matrix.iter().zip(oracle.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn complete_graph_euclidean_equals_pairwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((12, 4), |_| rng.random_range(-1.0..1.0));
        assert_eq!(
            complete_graph_distances(&x, DistanceMetric::Euclidean),
            pairwise_distance(&x, DistanceMetric::Euclidean)
        );
    }

    #[test]
    fn complete_graph_cosine_matches_heap_dijkstra() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((10, 3), |_| rng.random_range(-1.0..1.0));
        let direct = pairwise_distance(&x, DistanceMetric::Cosine);
        let adj: Vec<Vec<(usize, f64)>> = (0..10)
            .map(|i| (0..10).filter(|&j| j != i).map(|j| (j, direct[[i, j]])).collect())
            .collect();
        let got = complete_graph_distances(&x, DistanceMetric::Cosine);
        for s in 0..10 {
            for (t, d) in dijkstra(&adj, s).into_iter().enumerate() {
                assert_abs_diff_eq!(got[[s, t]], d, epsilon = 1e-12);
            }
        }
        // Cosine violates the triangle inequality, so some pairs get shorter.
        assert!(got.iter().zip(direct.iter()).all(|(g, d)| *g <= *d + 1e-15));
    }

    #[test]
    fn single_node_complete_graph() {
        let x = array![[1.0, 2.0]];
        assert_eq!(
            complete_graph_distances(&x, DistanceMetric::Cosine),
            Array2::<f64>::zeros((1, 1))
        );
    }

    proptest! {
        #[test]
        fn geodesic_properties(seed in 0u64..10_000, n in 2usize..20, extra in (0usize..20, 0usize..20)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, n, 0.2);
            let metric = DistanceMetric::Euclidean;
            let d = geodesic_distances(&g, metric, 10.0);
            let x = g.features();
            for &(i, j) in g.edges() {
                prop_assert!(d.matrix[[i, j]] <= metric.distance(x.row(i), x.row(j)) + 1e-12);
            }
            let unreachable = floyd_reachability(&g);
            let unconnected: Vec<f64> = unreachable.iter().map(|&(i, j)| d.matrix[[i, j]]).collect();
            for v in &unconnected {
                prop_assert_eq!(*v, d.unconnected_value());
                if d.connected_max > 0.0 {
                    prop_assert!(*v > d.connected_max);
                }
            }

            // Adding an edge never lengthens a geodesic.
            let (a, b) = (extra.0 % n, extra.1 % n);
            if a != b && !g.has_edge(a, b) {
                let mut edges = g.edges().to_vec();
                edges.push((a, b));
                let g2 = g.with_edges(edges).unwrap();
                let d2 = geodesic_distances(&g2, metric, 10.0);
                // Only connected pairs are comparable; the Lambda fill moves
                // with the connected max.
                for ((i, j), before) in d.matrix.indexed_iter() {
                    if !unreachable.contains(&(i, j)) {
                        prop_assert!(d2.matrix[[i, j]] <= *before + 1e-12);
                    }
                }
            }
        }
    }

    fn floyd_reachability(g: &AttributedGraph) -> Vec<(usize, usize)> {
        let n = g.n();
        let mut r = vec![vec![false; n]; n];
        for i in 0..n {
            r[i][i] = true;
        }
        for &(i, j) in g.edges() {
            r[i][j] = true;
            r[j][i] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if r[i][k] && r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if !r[i][j] {
                    out.push((i, j));
                }
            }
        }
        out
    }
}
