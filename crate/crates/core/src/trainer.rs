//! Training loop: input similarities, then per-epoch augmentation and
//! minibatch updates of the embedding network.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{augment, AugmentationConfig};
use crate::container::{read_matrix, write_matrix, DISTANCE_MAGIC, SIMILARITY_MAGIC};
use crate::distance::{
    apply_unconnected_rule, complete_graph_distances, shortest_paths, DistanceMetric,
    GeodesicDistanceMatrix, PathWeighting,
};
use crate::error::{Error, Result};
use crate::graph::{adjacency, hop_neighborhoods, knn_graph, AdjacencyMatrix, AttributedGraph};
use crate::loss::{fused_loss, BregmanKind, FusedLossOptions, LossTerms, LOGI_EPS};
use crate::network::{
    backward, default_stack, forward, init_network, Activation, Aggregation, FcaVariant,
    GradientTape, NetworkParams,
};
use crate::optim::{Optimizer, OptimizerKind};
use crate::similarity::{
    similarity_from_distances, BisectionSettings, SimilarityMatrix, SimilarityOptions,
    SymmetrizeVariant,
};

/// Largest automatic batch size.
pub const MAX_AUTO_BATCH: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerChoice {
    Sgd,
    #[default]
    Adam,
}

/// Every knob of a training run. Field names double as the keys of the
/// flat configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// 0 selects `min(n, 1024)`.
    pub batch_size: usize,
    pub alpha: f64,
    pub nu_input: f64,
    pub nu_latent: f64,
    pub q_p: f64,
    pub p_minus: f64,
    pub lambda: f64,
    pub metric: DistanceMetric,
    /// 0 uses the true complete graph for the feature term.
    pub knn_k: usize,
    pub seed: u64,
    pub optimizer: OptimizerChoice,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub bregman: BregmanKind,
    pub logi_eps: f64,

    pub no_augment: bool,
    pub no_fca: bool,
    pub hard_similarity: bool,

    pub fc_dims: Vec<usize>,
    pub fca_dim: usize,
    pub latent_dim: usize,
    pub activation: Activation,
    pub fca_variant: FcaVariant,
    pub self_loops: bool,
    pub symmetrize_variant: SymmetrizeVariant,
    pub path_weighting: PathWeighting,
    pub row_normalize_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 500,
            batch_size: 0,
            alpha: 1.0,
            nu_input: 100.0,
            nu_latent: 0.01,
            q_p: 8.0,
            p_minus: 0.01,
            lambda: 10.0,
            metric: DistanceMetric::Cosine,
            knn_k: 0,
            seed: 0,
            optimizer: OptimizerChoice::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            bregman: BregmanKind::Logi,
            logi_eps: LOGI_EPS,
            no_augment: false,
            no_fca: false,
            hard_similarity: false,
            fc_dims: vec![500, 250],
            fca_dim: 250,
            latent_dim: 200,
            activation: Activation::LeakyRelu,
            fca_variant: FcaVariant::Gcn,
            self_loops: true,
            symmetrize_variant: SymmetrizeVariant::Doubled,
            path_weighting: PathWeighting::Metric,
            row_normalize_features: false,
        }
    }
}

impl TrainConfig {
    /// Named starting points: `paper_clustering` is the default setup,
    /// `viz_2d` shrinks the output layer to two coordinates.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper_clustering" => Ok(Self::default()),
            "viz_2d" => Ok(Self {
                latent_dim: 2,
                ..Self::default()
            }),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected paper_clustering or viz_2d)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 1 {
            return fail("batch_size must be at least 2 (0 selects automatically)".into());
        }
        for (name, v) in [("nu_input", self.nu_input), ("nu_latent", self.nu_latent)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.q_p > 1.0 && self.q_p.is_finite()) {
            return fail(format!("q_p must exceed 1, got {}", self.q_p));
        }
        if !(0.0..=1.0).contains(&self.p_minus) {
            return fail(format!("p_minus must lie in [0, 1], got {}", self.p_minus));
        }
        if !(self.lambda >= 1.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be >= 1, got {}", self.lambda));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.logi_eps > 0.0 && self.logi_eps < 0.5) {
            return fail(format!("logi_eps must lie in (0, 0.5), got {}", self.logi_eps));
        }
        if self.optimizer == OptimizerChoice::Adam
            && !((0.0..1.0).contains(&self.adam_beta1)
                && (0.0..1.0).contains(&self.adam_beta2)
                && self.adam_eps > 0.0)
        {
            return fail("adam betas must lie in [0, 1) and adam_eps must be positive".into());
        }
        if self.fc_dims.contains(&0) || self.fca_dim == 0 || self.latent_dim == 0 {
            return fail("layer widths must be positive".into());
        }
        Ok(())
    }

    /// Batch size for a graph of `n` nodes.
    pub fn resolved_batch_size(&self, n: usize) -> Result<usize> {
        let b = if self.batch_size == 0 {
            n.min(MAX_AUTO_BATCH)
        } else {
            self.batch_size
        };
        if b < 2 || b > n {
            return Err(Error::Config(format!("batch_size {b} must lie in 2..={n}")));
        }
        Ok(b)
    }

    pub fn optimizer_kind(&self) -> OptimizerKind {
        match self.optimizer {
            OptimizerChoice::Sgd => OptimizerKind::Sgd,
            OptimizerChoice::Adam => OptimizerKind::Adam {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
        }
    }

    pub fn network_spec(&self, input_dim: usize) -> Vec<crate::network::LayerSpec> {
        default_stack(
            input_dim,
            &self.fc_dims,
            self.fca_dim,
            self.latent_dim,
            self.activation,
            !self.no_fca,
        )
    }

    fn similarity_options(&self) -> SimilarityOptions {
        SimilarityOptions {
            nu: self.nu_input,
            q_p: self.q_p,
            bisection: BisectionSettings::default(),
            variant: self.symmetrize_variant,
        }
    }

    fn loss_options(&self) -> FusedLossOptions {
        FusedLossOptions {
            nu_latent: self.nu_latent,
            alpha: self.alpha,
            kind: self.bregman,
            variant: self.symmetrize_variant,
            eps: self.logi_eps,
        }
    }

    // Per-stage seeds at fixed offsets from the run seed.
    fn init_seed(&self) -> u64 {
        self.seed
    }

    fn augment_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    fn shuffle_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }
}

/// Input-space similarities consumed by the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Precomputed {
    /// Similarity over the complete (or k-NN) graph.
    pub p_complete: SimilarityMatrix,
    /// Similarity over the given edges.
    pub p_prior: SimilarityMatrix,
    pub cache_hit: bool,
    /// Cache file stem; empty when no cache directory was given.
    pub cache_key: String,
    pub cache_files: Vec<PathBuf>,
}

fn hash_graph(h: &mut Sha256, g: &AttributedGraph) {
    let x = g.features();
    h.update((x.nrows() as u64).to_le_bytes());
    h.update((x.ncols() as u64).to_le_bytes());
    for v in x.iter() {
        h.update(v.to_le_bytes());
    }
    h.update((g.edges().len() as u64).to_le_bytes());
    for &(i, j) in g.edges() {
        h.update((i as u64).to_le_bytes());
        h.update((j as u64).to_le_bytes());
    }
}

/// Content hashes for the distance and similarity caches.
fn cache_keys(g: &AttributedGraph, cfg: &TrainConfig) -> (String, String) {
    let mut h = Sha256::new();
    h.update(b"dmage-distances-v1");
    hash_graph(&mut h, g);
    h.update(
        format!(
            "{:?}|{:?}|{}|{}",
            cfg.metric, cfg.path_weighting, cfg.knn_k, cfg.row_normalize_features
        )
        .as_bytes(),
    );
    let dkey = format!("{:x}", h.finalize());
    let mut h = Sha256::new();
    h.update(b"dmage-similarity-v1");
    h.update(dkey.as_bytes());
    h.update(
        format!(
            "{:e}|{:e}|{:e}|{:?}|{}",
            cfg.nu_input, cfg.q_p, cfg.lambda, cfg.symmetrize_variant, cfg.hard_similarity
        )
        .as_bytes(),
    );
    (dkey, format!("{:x}", h.finalize()))
}

/// Raw shortest-path matrices (`inf` where unconnected) for the priori and
/// complete graphs.
fn raw_distances(g: &AttributedGraph, cfg: &TrainConfig) -> Result<(Array2<f64>, Array2<f64>)> {
    let gd = if cfg.row_normalize_features {
        g.row_normalized()
    } else {
        g.clone()
    };
    let prior = shortest_paths(&gd, cfg.metric, cfg.path_weighting);
    let complete = if cfg.knn_k == 0 {
        complete_graph_distances(gd.features(), cfg.metric)
    } else {
        let knn = knn_graph(gd.features(), cfg.knn_k, cfg.metric)?;
        shortest_paths(&knn, cfg.metric, cfg.path_weighting)
    };
    Ok((prior, complete))
}

fn similarity(d: &GeodesicDistanceMatrix, cfg: &TrainConfig) -> Result<SimilarityMatrix> {
    let s = similarity_from_distances(d, &cfg.similarity_options())?;
    let warned = s.calibration.num_warnings();
    if warned > 0 {
        log::warn!("sigma calibration: {warned} of {} rows hit a warning", d.n());
    }
    Ok(s.similarity)
}

/// 0/1 similarity straight from the adjacency.
fn hard_prior(g: &AttributedGraph) -> SimilarityMatrix {
    SimilarityMatrix::joint(adjacency(g).to_dense())
}

/// Builds both input similarity matrices. With a cache directory, results
/// are stored under content-hash keys and reloaded bit-identically.
pub fn precompute(g: &AttributedGraph, cfg: &TrainConfig, cache_dir: Option<&Path>) -> Result<Precomputed> {
    cfg.validate()?;
    if g.n() < 2 {
        return Err(Error::InvalidGraph(format!("graph has {} nodes; need at least 2", g.n())));
    }
    let Some(dir) = cache_dir else {
        let (prior, complete) = raw_distances(g, cfg)?;
        return finish_similarities(g, cfg, prior, complete, false, String::new(), Vec::new());
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (dkey, skey) = cache_keys(g, cfg);
    let sim_prior = dir.join(format!("{skey}.prior.dmgs"));
    let sim_complete = dir.join(format!("{skey}.complete.dmgs"));
    let dist_prior = dir.join(format!("{dkey}.prior.dmgd"));
    let dist_complete = dir.join(format!("{dkey}.complete.dmgd"));
    let files = vec![dist_prior.clone(), dist_complete.clone(), sim_prior.clone(), sim_complete.clone()];

    if sim_prior.exists() && sim_complete.exists() {
        let p_prior = read_matrix(&sim_prior, SIMILARITY_MAGIC)?;
        let p_complete = read_matrix(&sim_complete, SIMILARITY_MAGIC)?;
        if p_prior.nrows() == g.n() && p_complete.nrows() == g.n() {
            log::info!("cache hit: similarities {skey}");
            return Ok(Precomputed {
                p_complete: SimilarityMatrix::joint(p_complete),
                p_prior: SimilarityMatrix::joint(p_prior),
                cache_hit: true,
                cache_key: skey,
                cache_files: files,
            });
        }
        log::warn!("cached similarities {skey} have the wrong size; recomputing");
    }

    let (prior, complete, dist_hit) = if dist_prior.exists() && dist_complete.exists() {
        log::info!("cache hit: distances {dkey}");
        (
            read_matrix(&dist_prior, DISTANCE_MAGIC)?,
            read_matrix(&dist_complete, DISTANCE_MAGIC)?,
            true,
        )
    } else {
        let (p, c) = raw_distances(g, cfg)?;
        write_matrix(&dist_prior, DISTANCE_MAGIC, &p)?;
        write_matrix(&dist_complete, DISTANCE_MAGIC, &c)?;
        (p, c, false)
    };
    let out = finish_similarities(g, cfg, prior, complete, dist_hit, skey, files)?;
    write_matrix(&sim_prior, SIMILARITY_MAGIC, &out.p_prior.values)?;
    write_matrix(&sim_complete, SIMILARITY_MAGIC, &out.p_complete.values)?;
    Ok(out)
}

fn finish_similarities(
    g: &AttributedGraph,
    cfg: &TrainConfig,
    prior: Array2<f64>,
    complete: Array2<f64>,
    cache_hit: bool,
    cache_key: String,
    cache_files: Vec<PathBuf>,
) -> Result<Precomputed> {
    let p_prior = if cfg.hard_similarity {
        hard_prior(g)
    } else {
        similarity(&apply_unconnected_rule(prior, cfg.lambda), cfg)?
    };
    let p_complete = similarity(&apply_unconnected_rule(complete, cfg.lambda), cfg)?;
    Ok(Precomputed {
        p_complete,
        p_prior,
        cache_hit,
        cache_key,
        cache_files,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub embeddings: Array2<f64>,
    pub params: NetworkParams,
    /// Batch-averaged loss terms, one entry per epoch.
    pub loss_history: Vec<LossTerms>,
    pub config_echo: TrainConfig,
}

fn aggregation(n: usize, edges: &[(usize, usize)], cfg: &TrainConfig) -> Aggregation {
    Aggregation::new(&AdjacencyMatrix::from_edges(n, edges), cfg.fca_variant, cfg.self_loops)
}

/// Splits a permutation into consecutive batches of `b`; a trailing batch
/// with a single node joins the previous one, since it has no pairs.
fn batches(perm: &[usize], b: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = perm.chunks(b).collect();
    if out.len() > 1 && out.last().is_some_and(|c| c.len() < 2) {
        out.pop();
        let k = out.len() - 1;
        out[k] = &perm[k * b..];
    }
    out
}

/// Runs the full training loop on precomputed similarities.
pub fn train_with(g: &AttributedGraph, cfg: &TrainConfig, pre: &Precomputed) -> Result<TrainResult> {
    cfg.validate()?;
    let n = g.n();
    if pre.p_complete.n() != n || pre.p_prior.n() != n {
        return Err(Error::Dimension(format!(
            "precomputed similarities cover {} nodes, graph has {n}",
            pre.p_complete.n()
        )));
    }
    let b = cfg.resolved_batch_size(n)?;
    let x = g.features();
    let mut params = init_network(&cfg.network_spec(x.ncols()), cfg.init_seed())?;
    let mut opt = Optimizer::new(cfg.optimizer_kind(), cfg.learning_rate, &params);
    let loss_opts = cfg.loss_options();
    let hoods = hop_neighborhoods(g);
    let aug_cfg = AugmentationConfig::new(cfg.p_minus, cfg.augment_seed())?;
    let prior_agg = aggregation(n, g.edges(), cfg);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed());
    let mut perm: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut tape = GradientTape::new();

    for epoch in 0..cfg.epochs {
        let agg = if cfg.no_augment || cfg.no_fca {
            prior_agg.clone()
        } else {
            let a = augment(g, &hoods, &aug_cfg, epoch as u64);
            aggregation(n, &a.result, cfg)
        };
        perm.shuffle(&mut shuffle_rng);
        let chunks = batches(&perm, b);
        let mut sum = LossTerms {
            feature_term: 0.0,
            structure_term: 0.0,
            alpha: cfg.alpha,
            total: 0.0,
        };
        for batch in &chunks {
            let z = forward(x, &agg, &params, Some(&mut tape))?;
            let loss = fused_loss(&pre.p_complete, &pre.p_prior, &z, batch, &loss_opts)?;
            if !loss.terms.total.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    last_finite: epoch.checked_sub(1),
                });
            }
            let grads = backward(&tape, &params, &loss.grad_z)?;
            opt.step(&mut params, &grads);
            sum.feature_term += loss.terms.feature_term;
            sum.structure_term += loss.terms.structure_term;
            sum.total += loss.terms.total;
        }
        let k = chunks.len() as f64;
        let terms = LossTerms {
            feature_term: sum.feature_term / k,
            structure_term: sum.structure_term / k,
            alpha: cfg.alpha,
            total: sum.total / k,
        };
        log::debug!("epoch {epoch}: total {:.6e}", terms.total);
        history.push(terms);
    }

    let embeddings = forward(x, &prior_agg, &params, None)?;
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            epoch: cfg.epochs,
            last_finite: cfg.epochs.checked_sub(1),
        });
    }
    Ok(TrainResult {
        embeddings,
        params,
        loss_history: history,
        config_echo: cfg.clone(),
    })
}

/// Precompute (optionally cached) and train.
pub fn train(g: &AttributedGraph, cfg: &TrainConfig, cache_dir: Option<&Path>) -> Result<TrainResult> {
    let pre = precompute(g, cfg, cache_dir)?;
    train_with(g, cfg, &pre)
}

/// Forward pass with the priori adjacency and no augmentation.
pub fn embed(g: &AttributedGraph, params: &NetworkParams, cfg: &TrainConfig) -> Result<Array2<f64>> {
    forward(g.features(), &aggregation(g.n(), g.edges(), cfg), params, None)
}
