//! The embedding network: a chain of fully connected layers with a single
//! fully-connected-aggregation (FCA) layer, plus reverse-mode gradients.
//!
//! An FCA layer is a linear map followed by neighbor aggregation with a fixed
//! normalized propagation matrix and no activation.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AdjacencyMatrix;

const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Fc,
    Fca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    #[default]
    LeakyRelu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Linear => v,
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu => {
                if v > 0.0 {
                    v
                } else {
                    LEAKY_SLOPE * v
                }
            }
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if pre > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn fc(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Fc,
            in_dim,
            out_dim,
            activation,
        }
    }

    /// FCA layers never carry an activation.
    pub fn fca(in_dim: usize, out_dim: usize) -> Self {
        Self {
            kind: LayerKind::Fca,
            in_dim,
            out_dim,
            activation: Activation::Linear,
        }
    }
}

/// `FC(input -> fc_dims[0]) -> ... -> FCA(fca_dim) -> FC(latent_dim)`.
/// Hidden FC layers use `hidden`; the FCA and output layers are linear.
/// With `use_fca = false` the FCA slot becomes a linear FC layer of the same shape.
pub fn default_stack(
    input_dim: usize,
    fc_dims: &[usize],
    fca_dim: usize,
    latent_dim: usize,
    hidden: Activation,
    use_fca: bool,
) -> Vec<LayerSpec> {
    let mut spec = Vec::with_capacity(fc_dims.len() + 2);
    let mut prev = input_dim;
    for &d in fc_dims {
        spec.push(LayerSpec::fc(prev, d, hidden));
        prev = d;
    }
    spec.push(if use_fca {
        LayerSpec::fca(prev, fca_dim)
    } else {
        LayerSpec::fc(prev, fca_dim, Activation::Linear)
    });
    spec.push(LayerSpec::fc(fca_dim, latent_dim, Activation::Linear));
    spec
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `in_dim x out_dim`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
    pub seed: u64,
    /// Bumped on every in-place update; tapes remember the version they saw.
    version: u64,
}

impl NetworkParams {
    pub fn new(layers: Vec<Layer>, seed: u64) -> Result<Self> {
        validate_chain(&layers.iter().map(|l| l.spec).collect::<Vec<_>>())?;
        for l in &layers {
            if l.weight.dim() != (l.spec.in_dim, l.spec.out_dim) || l.bias.len() != l.spec.out_dim {
                return Err(Error::Dimension(format!(
                    "layer tensors do not match spec {:?}",
                    l.spec
                )));
            }
        }
        Ok(Self {
            layers,
            seed,
            version: 0,
        })
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.spec.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.out_dim)
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }
}

fn validate_chain(spec: &[LayerSpec]) -> Result<()> {
    if spec.is_empty() {
        return Err(Error::Dimension("network needs at least one layer".into()));
    }
    for (k, w) in spec.windows(2).enumerate() {
        if w[0].out_dim != w[1].in_dim {
            return Err(Error::Dimension(format!(
                "layer {k} outputs {} but layer {} expects {}",
                w[0].out_dim,
                k + 1,
                w[1].in_dim
            )));
        }
    }
    if let Some(l) = spec.iter().find(|l| l.in_dim == 0 || l.out_dim == 0) {
        return Err(Error::Dimension(format!("zero-width layer {l:?}")));
    }
    Ok(())
}

/// Glorot-uniform weights, zero biases.
pub fn init_network(spec: &[LayerSpec], seed: u64) -> Result<NetworkParams> {
    validate_chain(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .iter()
        .map(|&s| {
            let bound = (6.0 / (s.in_dim + s.out_dim) as f64).sqrt();
            let weight =
                Array2::from_shape_simple_fn((s.in_dim, s.out_dim), || rng.random_range(-bound..=bound));
            Layer {
                spec: s,
                weight,
                bias: Array1::zeros(s.out_dim),
            }
        })
        .collect();
    NetworkParams::new(layers, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FcaVariant {
    /// `D^-1/2 (A + I) D^-1/2`
    #[default]
    Gcn,
    /// Multiplies by `sqrt(|N(i)| |N(j)|)` instead of dividing.
    Verbatim,
}

/// Sparse symmetric propagation matrix used by FCA layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Aggregation {
    pub fn new(adj: &AdjacencyMatrix, variant: FcaVariant, self_loops: bool) -> Self {
        let n = adj.n();
        let deg: Vec<f64> = (0..n)
            .map(|i| (adj.degree(i) + usize::from(self_loops)) as f64)
            .collect();
        let weight = |i: usize, j: usize| -> f64 {
            let p = deg[i] * deg[j];
            match variant {
                FcaVariant::Gcn => 1.0 / p.sqrt(),
                FcaVariant::Verbatim => p.sqrt(),
            }
        };
        let rows = (0..n)
            .map(|i| {
                let mut r: Vec<(usize, f64)> = Vec::with_capacity(adj.degree(i) + 1);
                let mut pushed_self = !self_loops;
                for &j in adj.neighbors(i) {
                    if !pushed_self && j > i {
                        r.push((i, weight(i, i)));
                        pushed_self = true;
                    }
                    r.push((j, weight(i, j)));
                }
                if !pushed_self {
                    r.push((i, weight(i, i)));
                }
                r
            })
            .collect();
        Self { rows }
    }

    /// `A_hat = D^-1/2 (A + I) D^-1/2` over the given adjacency.
    pub fn gcn(adj: &AdjacencyMatrix) -> Self {
        Self::new(adj, FcaVariant::Gcn, true)
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(h.raw_dim());
        for (i, r) in self.rows.iter().enumerate() {
            let mut row = out.row_mut(i);
            for &(j, w) in r {
                row.scaled_add(w, &h.row(j));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut a = Array2::zeros((n, n));
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, w) in r {
                a[[i, j]] = w;
            }
        }
        a
    }
}

fn affine(z: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Result<Array2<f64>> {
    if z.ncols() != w.nrows() || w.ncols() != b.len() {
        return Err(Error::Dimension(format!(
            "input {:?} x weight {:?} + bias {}",
            z.dim(),
            w.dim(),
            b.len()
        )));
    }
    let mut h = z.dot(w);
    h += b;
    Ok(h)
}

/// `act(Z W + B)`.
pub fn fc_forward(
    z: &Array2<f64>,
    w: &Array2<f64>,
    b: &Array1<f64>,
    act: Activation,
) -> Result<Array2<f64>> {
    let mut h = affine(z, w, b)?;
    if act != Activation::Linear {
        h.mapv_inplace(|v| act.apply(v));
    }
    Ok(h)
}

/// `A_hat (Z W + B)` with no activation.
pub fn fca_forward(
    z: &Array2<f64>,
    agg: &Aggregation,
    w: &Array2<f64>,
    b: &Array1<f64>,
) -> Result<Array2<f64>> {
    if agg.n() != z.nrows() {
        return Err(Error::Dimension(format!(
            "aggregation over {} nodes applied to {} rows",
            agg.n(),
            z.nrows()
        )));
    }
    Ok(agg.apply(&affine(z, w, b)?))
}

#[derive(Debug, Clone)]
struct LayerRecord {
    input: Array2<f64>,
    /// Pre-activation for FC layers, pre-aggregation for FCA layers.
    pre: Array2<f64>,
}

/// Forward intermediates for one pass, tied to the parameter version and
/// aggregation used.
#[derive(Debug, Clone, Default)]
pub struct GradientTape {
    version: Option<u64>,
    records: Vec<LayerRecord>,
    output: Option<Array2<f64>>,
    aggregation: Option<Aggregation>,
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output(&self) -> Option<&Array2<f64>> {
        self.output.as_ref()
    }

    /// Recorded pre-activations, one per layer.
    pub fn pre_activations(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.records.iter().map(|r| &r.pre)
    }

    /// Recomputes the forward pass from the recorded input and aggregation
    /// and reports whether it reproduces the recorded output exactly.
    pub fn replay(&self, params: &NetworkParams) -> Result<bool> {
        let (Some(first), Some(out), Some(agg)) =
            (self.records.first(), &self.output, &self.aggregation)
        else {
            return Ok(false);
        };
        Ok(forward(&first.input, agg, params, None)? == *out)
    }
}

pub fn forward(
    x: &Array2<f64>,
    agg: &Aggregation,
    params: &NetworkParams,
    mut tape: Option<&mut GradientTape>,
) -> Result<Array2<f64>> {
    if x.ncols() != params.input_dim() {
        return Err(Error::Dimension(format!(
            "input has {} columns, network expects {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    if let Some(t) = tape.as_deref_mut() {
        t.records.clear();
        t.version = Some(params.version());
        t.aggregation = Some(agg.clone());
    }
    let mut z = x.clone();
    for layer in &params.layers {
        let pre = affine(&z, &layer.weight, &layer.bias)?;
        let out = match layer.spec.kind {
            LayerKind::Fc => {
                let act = layer.spec.activation;
                if act == Activation::Linear {
                    pre.clone()
                } else {
                    pre.mapv(|v| act.apply(v))
                }
            }
            LayerKind::Fca => {
                if agg.n() != z.nrows() {
                    return Err(Error::Dimension(format!(
                        "aggregation over {} nodes applied to {} rows",
                        agg.n(),
                        z.nrows()
                    )));
                }
                agg.apply(&pre)
            }
        };
        if let Some(t) = tape.as_deref_mut() {
            t.records.push(LayerRecord { input: z, pre });
        }
        z = out;
    }
    if let Some(t) = tape {
        t.output = Some(z.clone());
    }
    Ok(z)
}

/// Parameter gradients, one `(dW, dB)` per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Reverse pass for the forward recorded in `tape`, given `dLoss/dZ`.
pub fn backward(tape: &GradientTape, params: &NetworkParams, d_out: &Array2<f64>) -> Result<Gradients> {
    let recorded = tape.version.ok_or(Error::StaleTape {
        recorded: u64::MAX,
        current: params.version(),
    })?;
    if recorded != params.version() || tape.records.len() != params.layers.len() {
        return Err(Error::StaleTape {
            recorded,
            current: params.version(),
        });
    }
    let out_shape = tape.output.as_ref().map(|o| o.dim());
    if out_shape != Some(d_out.dim()) {
        return Err(Error::Dimension(format!(
            "upstream gradient {:?} does not match output {:?}",
            d_out.dim(),
            out_shape
        )));
    }
    let agg = tape.aggregation.as_ref().expect("tape recorded an aggregation");
    let mut grads = Vec::with_capacity(params.layers.len());
    let mut g = d_out.clone();
    for (k, (layer, rec)) in params.layers.iter().zip(&tape.records).enumerate().rev() {
        let d_pre = match layer.spec.kind {
            LayerKind::Fc => {
                let act = layer.spec.activation;
                if act == Activation::Linear {
                    g
                } else {
                    let mut d = g;
                    d.zip_mut_with(&rec.pre, |dv, &p| *dv *= act.derivative(p));
                    d
                }
            }
            // The propagation matrix is symmetric, so its transpose is itself.
            LayerKind::Fca => agg.apply(&g),
        };
        let dw = rec.input.t().dot(&d_pre);
        let db = d_pre.sum_axis(Axis(0));
        if k > 0 {
            g = d_pre.dot(&layer.weight.t());
        } else {
            g = Array2::zeros((0, 0));
        }
        grads.push((dw, db));
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}
