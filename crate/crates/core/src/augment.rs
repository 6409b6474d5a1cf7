//! Random graph-structure augmentation: drop existing edges, then add the
//! same number of edges between nodes two hops apart.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{AttributedGraph, Edge, NeighborhoodIndex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationConfig {
    pub p_minus: f64,
    pub rng_seed: u64,
    /// Add as many hop-2 edges as were removed.
    pub equalize: bool,
}

impl AugmentationConfig {
    pub fn new(p_minus: f64, rng_seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_minus) {
            return Err(Error::Config(format!("p_minus must lie in [0, 1], got {p_minus}")));
        }
        Ok(Self {
            p_minus,
            rng_seed,
            equalize: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedEdges {
    pub removed: Vec<Edge>,
    pub added: Vec<Edge>,
    /// `E - removed + added`, sorted.
    pub result: Vec<Edge>,
    /// Set when fewer hop-2 candidates existed than edges were removed.
    pub short_of_candidates: bool,
}

/// Mixes the base seed with the augmentation round so every round draws an
/// independent, reproducible stream.
pub(crate) fn round_seed(seed: u64, round: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ round.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Drops each edge independently with probability `p_minus`, then samples
/// hop-2 pairs (from the original graph) uniformly without replacement.
/// Deterministic in `(cfg.rng_seed, round)`.
pub fn augment(
    g: &AttributedGraph,
    hoods: &NeighborhoodIndex,
    cfg: &AugmentationConfig,
    round: u64,
) -> AugmentedEdges {
    let mut rng = ChaCha8Rng::seed_from_u64(round_seed(cfg.rng_seed, round));
    let mut removed = Vec::new();
    let mut kept = Vec::with_capacity(g.edges().len());
    for &e in g.edges() {
        if rng.random::<f64>() < cfg.p_minus {
            removed.push(e);
        } else {
            kept.push(e);
        }
    }

    let mut added = Vec::new();
    let mut short = false;
    if !removed.is_empty() {
        let candidates = hoods.hop2_pairs();
        let want = if cfg.equalize {
            removed.len()
        } else {
            // Without equalization each candidate is kept with the same rate
            // that balances counts in expectation.
            let p_plus = removed.len() as f64 / candidates.len().max(1) as f64;
            candidates.iter().filter(|_| rng.random::<f64>() < p_plus).count()
        };
        if candidates.len() < want {
            short = true;
            log::warn!(
                "augmentation: only {} hop-2 candidates for {} removed edges",
                candidates.len(),
                want
            );
            added = candidates;
        } else {
            let mut picks = sample(&mut rng, candidates.len(), want).into_vec();
            picks.sort_unstable();
            added = picks.into_iter().map(|k| candidates[k]).collect();
        }
    }

    let mut result = kept;
    result.extend_from_slice(&added);
    result.sort_unstable();
    AugmentedEdges {
        removed,
        added,
        result,
        short_of_candidates: short,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::hop_neighborhoods;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn graph(n: usize, edges: &[Edge]) -> AttributedGraph {
        AttributedGraph::new(Array2::zeros((n, 1)), edges.iter().copied(), None).unwrap()
    }

    fn random_graph(seed: u64, n: usize, p: f64) -> AttributedGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        graph(n, &edges)
    }

    #[test]
    fn zero_rate_is_identity() {
        let g = random_graph(1, 30, 0.2);
        let h = hop_neighborhoods(&g);
        let a = augment(&g, &h, &AugmentationConfig::new(0.0, 3).unwrap(), 0);
        assert!(a.removed.is_empty() && a.added.is_empty());
        assert_eq!(a.result, g.edges());
    }

    #[test]
    fn full_drop_on_triangle_has_no_candidates() {
        let g = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let h = hop_neighborhoods(&g);
        let a = augment(&g, &h, &AugmentationConfig::new(1.0, 3).unwrap(), 0);
        assert_eq!(a.removed, g.edges());
        assert!(a.added.is_empty());
        assert!(a.short_of_candidates);
        assert!(a.result.is_empty());
    }

    #[test]
    fn rejects_bad_rate() {
        assert!(AugmentationConfig::new(1.5, 0).is_err());
        assert!(AugmentationConfig::new(-0.1, 0).is_err());
    }

    #[test]
    fn removal_count_follows_binomial() {
        let g = random_graph(2, 200, 0.05);
        let h = hop_neighborhoods(&g);
        let cfg = AugmentationConfig::new(0.01, 77).unwrap();
        let m = g.edges().len() as f64;
        let trials = 1000;
        let mut total = 0usize;
        for t in 0..trials {
            let a = augment(&g, &h, &cfg, t);
            total += a.removed.len();
            assert_eq!(a.added.len(), a.removed.len());
        }
        let mean = total as f64 / trials as f64;
        let sd_of_mean = (m * 0.01 * 0.99 / trials as f64).sqrt();
        assert!((mean - 0.01 * m).abs() <= 3.0 * sd_of_mean, "mean {mean}, expected {}", 0.01 * m);
    }

    #[test]
    fn unequalized_mode_balances_in_expectation() {
        let g = random_graph(4, 80, 0.08);
        let h = hop_neighborhoods(&g);
        let mut cfg = AugmentationConfig::new(0.1, 5).unwrap();
        cfg.equalize = false;
        let (mut rem, mut add) = (0usize, 0usize);
        for t in 0..300 {
            let a = augment(&g, &h, &cfg, t);
            rem += a.removed.len();
            add += a.added.len();
        }
        let ratio = add as f64 / rem as f64;
        assert!((0.85..1.15).contains(&ratio), "{ratio}");
    }

    proptest! {
        #[test]
        fn augmented_edges_are_well_formed(seed in 0u64..500, round in 0u64..50, p in 0.0f64..0.5) {
            let g = random_graph(seed, 40, 0.08);
            let h = hop_neighborhoods(&g);
            let cfg = AugmentationConfig::new(p, seed).unwrap();
            let a = augment(&g, &h, &cfg, round);
            let b = augment(&g, &h, &cfg, round);
            prop_assert_eq!(&a, &b);
            for &(i, j) in &a.result {
                prop_assert!(i < j);
            }
            prop_assert!(a.result.windows(2).all(|w| w[0] < w[1]));
            for e in &a.removed {
                prop_assert!(g.edges().contains(e));
            }
            for &(i, j) in &a.added {
                prop_assert!(!g.has_edge(i, j));
                prop_assert!(h.hop2[i].contains(&j));
            }
            if !a.short_of_candidates {
                prop_assert_eq!(a.added.len(), a.removed.len());
            }
            prop_assert_eq!(a.result.len(), g.edges().len() - a.removed.len() + a.added.len());
        }
    }
}
