//! Synthetic attributed graphs with known communities.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::AttributedGraph;

/// Two-block stochastic block model with 2-D Gaussian features centered at
/// `(-offset, 0)` and `(+offset, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoBlockSbm {
    pub n: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub offset: f64,
    pub sigma: f64,
}

impl Default for TwoBlockSbm {
    fn default() -> Self {
        Self {
            n: 60,
            p_intra: 0.3,
            p_inter: 0.02,
            offset: 2.0,
            sigma: 1.0,
        }
    }
}

impl TwoBlockSbm {
    /// Nodes `0..n/2` form block 0, the rest block 1; labels are the blocks.
    pub fn generate(&self, seed: u64) -> Result<AttributedGraph> {
        if self.n < 2 || !(self.sigma > 0.0) {
            return Err(Error::Config("need n >= 2 and sigma > 0".into()));
        }
        let (p_in, p_out) = (self.p_intra, self.p_inter);
        if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) {
            return Err(Error::Config("edge probabilities must lie in [0, 1]".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.sigma).expect("positive sigma");
        let labels: Vec<usize> = (0..self.n).map(|i| usize::from(i >= self.n / 2)).collect();
        let x = Array2::from_shape_fn((self.n, 2), |(i, c)| {
            let center = match (c, labels[i]) {
                (0, 0) => -self.offset,
                (0, _) => self.offset,
                _ => 0.0,
            };
            center + noise.sample(&mut rng)
        });
        let mut edges = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let p = if labels[i] == labels[j] { p_in } else { p_out };
                if rng.random_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        AttributedGraph::new(x, edges, Some(labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_statistics() {
        let spec = TwoBlockSbm { n: 200, ..TwoBlockSbm::default() };
        let g = spec.generate(1).unwrap();
        let labels = g.labels().unwrap();
        let (mut intra, mut inter) = (0.0f64, 0.0f64);
        for &(i, j) in g.edges() {
            if labels[i] == labels[j] {
                intra += 1.0;
            } else {
                inter += 1.0;
            }
        }
        // 2 * C(100, 2) intra pairs, 100^2 inter pairs.
        let p_in = intra / 9900.0;
        let p_out = inter / 10000.0;
        assert!((p_in - 0.3).abs() < 0.03, "{p_in}");
        assert!((p_out - 0.02).abs() < 0.01, "{p_out}");
        let x = g.features();
        let mean0: f64 = (0..100).map(|i| x[[i, 0]]).sum::<f64>() / 100.0;
        let mean1: f64 = (100..200).map(|i| x[[i, 0]]).sum::<f64>() / 100.0;
        assert!((mean0 + 2.0).abs() < 0.4 && (mean1 - 2.0).abs() < 0.4);
        assert_eq!(spec.generate(1).unwrap(), g);
    }
}
