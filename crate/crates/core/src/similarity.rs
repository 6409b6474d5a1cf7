//! Geodesic distances to symmetric similarities.
//!
//! Each row is shifted by its nearest-neighbor distance `rho_i`, scaled by a
//! per-row `sigma_i` found by bisection, mapped through a Student-t kernel and
//! finally symmetrized into a joint similarity.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::distance::{geodesic_distances_weighted, DistanceMetric, GeodesicDistanceMatrix, PathWeighting};
use crate::error::{Error, Result};
use crate::graph::AttributedGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    nu: f64,
}

impl KernelParams {
    pub fn new(nu: f64) -> Result<Self> {
        if nu > 0.0 && nu.is_finite() {
            Ok(Self { nu })
        } else {
            Err(Error::Config(format!("degrees of freedom must be positive, got {nu}")))
        }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn eval(&self, d: f64) -> f64 {
        t_kernel(d, self.nu)
    }
}

/// Log of the kernel's normalizing constant,
/// `sqrt(2 pi) Gamma((nu+1)/2) / (sqrt(nu pi) Gamma(nu/2))`.
///
/// With `x = nu/2` this is `ln(Gamma(x + 1/2) / Gamma(x)) - ln(x)/2`. For
/// large `x` the difference of two big log-gammas loses digits, so the
/// asymptotic series of the ratio is used instead.
fn ln_kernel_constant(nu: f64) -> f64 {
    let x = nu / 2.0;
    if x >= 16.0 {
        let r = 1.0 / (x * x);
        let series = -1.0 / 8.0
            + r * (1.0 / 192.0 + r * (-1.0 / 640.0 + r * (17.0 / 14336.0 + r * (-31.0 / 18432.0))));
        series / x
    } else {
        ln_gamma(x + 0.5) - ln_gamma(x) - 0.5 * x.ln()
    }
}

/// Student-t kernel scaled by `sqrt(2 pi)`:
/// `kappa(d, nu) = sqrt(2 pi) Gamma((nu+1)/2) / (sqrt(nu pi) Gamma(nu/2)) * (1 + d^2/nu)^(-(nu+1)/2)`.
/// Evaluated in log space so large `nu` does not overflow the gamma functions.
pub fn t_kernel(d: f64, nu: f64) -> f64 {
    (ln_kernel_constant(nu) - 0.5 * (nu + 1.0) * (d * d / nu).ln_1p()).exp()
}

/// `d kappa / d d` divided by `d`, i.e. `-kappa (nu+1) / (nu + d^2)`.
/// Finite at `d = 0`, which makes the chain rule through a euclidean norm
/// well defined for coincident points.
pub(crate) fn t_kernel_grad_over_d(kappa: f64, d: f64, nu: f64) -> f64 {
    -kappa * (nu + 1.0) / (nu + d * d)
}

/// Shifts by `rho` and scales by `sigma`.
pub fn normalize_row(row: &[f64], rho: f64, sigma: f64) -> Vec<f64> {
    row.iter().map(|d| (d - rho) / sigma).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionSettings {
    pub sigma_lo: f64,
    pub sigma_hi_start: f64,
    pub max_doublings: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BisectionSettings {
    fn default() -> Self {
        Self {
            sigma_lo: 1e-4,
            sigma_hi_start: 1.0,
            max_doublings: 64,
            tol: 1e-5,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationWarning {
    /// Every neighbor sits at `rho`; the objective does not depend on sigma.
    Constant,
    /// Even the smallest sigma overshoots the target.
    TargetBelowRange,
    /// The target exceeds what the largest sigma reaches.
    TargetAboveRange,
    /// Bisection ran out of iterations before meeting the tolerance.
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaCalibration {
    pub sigma: f64,
    /// `|q_p - 2^(sum kappa^2)|` at the returned sigma.
    pub objective: f64,
    pub warning: Option<CalibrationWarning>,
}

fn kernel_square_sum(row: &[f64], rho: f64, sigma: f64, nu: f64) -> f64 {
    let c = ln_kernel_constant(nu);
    row.iter()
        .map(|d| {
            let x = (d - rho) / sigma;
            (2.0 * (c - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p())).exp()
        })
        .sum()
}

/// Finds the sigma at which `2^(sum_j kappa((d_j - rho)/sigma, nu)^2)` equals
/// `q_p`. `row` holds the distances to every other node (self excluded).
pub fn calibrate_sigma(
    row: &[f64],
    rho: f64,
    nu: f64,
    q_p: f64,
    settings: &BisectionSettings,
) -> Result<SigmaCalibration> {
    if !(q_p > 1.0) {
        return Err(Error::Config(format!("q_p must exceed 1, got {q_p}")));
    }
    if row.is_empty() {
        return Err(Error::Config("calibration needs at least one neighbor".into()));
    }
    let target = q_p.log2();
    let eval = |sigma: f64| {
        let s = kernel_square_sum(row, rho, sigma, nu);
        (s, (q_p - s.exp2()).abs())
    };
    let lo0 = settings.sigma_lo;

    if row.iter().all(|&d| d == rho) {
        let (_, obj) = eval(lo0);
        let warning = (obj > settings.tol).then_some(CalibrationWarning::Constant);
        return Ok(SigmaCalibration {
            sigma: lo0,
            objective: obj,
            warning,
        });
    }

    let (s_lo, obj_lo) = eval(lo0);
    if s_lo >= target || obj_lo <= settings.tol {
        let warning = (obj_lo > settings.tol).then_some(CalibrationWarning::TargetBelowRange);
        return Ok(SigmaCalibration {
            sigma: lo0,
            objective: obj_lo,
            warning,
        });
    }

    let mut lo = lo0;
    let mut hi = settings.sigma_hi_start.max(lo0);
    let mut doublings = 0;
    loop {
        let (s, obj) = eval(hi);
        if obj <= settings.tol {
            return Ok(SigmaCalibration {
                sigma: hi,
                objective: obj,
                warning: None,
            });
        }
        if s >= target {
            break;
        }
        if doublings == settings.max_doublings {
            return Ok(SigmaCalibration {
                sigma: hi,
                objective: obj,
                warning: Some(CalibrationWarning::TargetAboveRange),
            });
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
    }

    let mut best = (f64::INFINITY, hi);
    for _ in 0..settings.max_iter {
        let mid = 0.5 * (lo + hi);
        let (s, obj) = eval(mid);
        if obj < best.0 {
            best = (obj, mid);
        }
        if obj <= settings.tol {
            return Ok(SigmaCalibration {
                sigma: mid,
                objective: obj,
                warning: None,
            });
        }
        if s < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SigmaCalibration {
        sigma: best.1,
        objective: best.0,
        warning: Some(CalibrationWarning::NotConverged),
    })
}

/// Per-row shift and scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationParams {
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
    pub q_p: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub warnings: Vec<Option<CalibrationWarning>>,
}

impl CalibrationParams {
    /// Fixed `rho = 0`, `sigma = 1` for every row.
    pub fn identity(n: usize) -> Self {
        Self {
            rho: vec![0.0; n],
            sigma: vec![1.0; n],
            q_p: f64::NAN,
            tol: 0.0,
            max_iter: 0,
            warnings: vec![None; n],
        }
    }

    pub fn num_warnings(&self) -> usize {
        self.warnings.iter().filter(|w| w.is_some()).count()
    }
}

fn off_diagonal_row(d: &Array2<f64>, i: usize) -> Vec<f64> {
    d.row(i)
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .collect()
}

/// Computes `rho_i` (nearest other node) and calibrated `sigma_i` for every row.
pub fn calibrate(
    d: &Array2<f64>,
    nu: f64,
    q_p: f64,
    settings: &BisectionSettings,
) -> Result<CalibrationParams> {
    let n = d.nrows();
    let mut params = CalibrationParams {
        rho: Vec::with_capacity(n),
        sigma: Vec::with_capacity(n),
        q_p,
        tol: settings.tol,
        max_iter: settings.max_iter,
        warnings: Vec::with_capacity(n),
    };
    for i in 0..n {
        let row = off_diagonal_row(d, i);
        let rho = row.iter().copied().fold(f64::INFINITY, f64::min);
        let cal = calibrate_sigma(&row, rho, nu, q_p, settings)?;
        params.rho.push(rho);
        params.sigma.push(cal.sigma);
        params.warnings.push(cal.warning);
    }
    let warned = params.num_warnings();
    if warned > 0 {
        log::warn!("sigma calibration: {warned} of {n} rows did not reach q_p = {q_p}");
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityKind {
    Conditional,
    Joint,
}

/// Square matrix of similarities in `[0, 1]` with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Array2<f64>,
    pub kind: SimilarityKind,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn joint(values: Array2<f64>) -> Self {
        Self {
            values,
            kind: SimilarityKind::Joint,
        }
    }

    /// Restriction to the rows and columns in `idx`, in that order.
    pub fn submatrix(&self, idx: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| self.values[[idx[a], idx[b]]])
    }
}

/// `p_{i|j} = kappa((D_ij - rho_i) / sigma_i, nu)`.
pub fn conditional_similarity(
    d: &Array2<f64>,
    kernel: KernelParams,
    calib: &CalibrationParams,
) -> SimilarityMatrix {
    let n = d.nrows();
    let values = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            kernel.eval((d[[i, j]] - calib.rho[i]) / calib.sigma[i])
        }
    });
    SimilarityMatrix {
        values,
        kind: SimilarityKind::Conditional,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetrizeVariant {
    /// `p + q - 2pq`
    #[default]
    Doubled,
    /// `p + q - pq` (probabilistic union)
    Union,
}

impl SymmetrizeVariant {
    pub fn combine(self, p: f64, q: f64) -> f64 {
        match self {
            SymmetrizeVariant::Doubled => p + q - 2.0 * p * q,
            SymmetrizeVariant::Union => p + q - p * q,
        }
    }

    /// Partial derivative of `combine(p, q)` with respect to `p`.
    pub(crate) fn d_first(self, q: f64) -> f64 {
        match self {
            SymmetrizeVariant::Doubled => 1.0 - 2.0 * q,
            SymmetrizeVariant::Union => 1.0 - q,
        }
    }
}

pub fn symmetrize(p: &SimilarityMatrix, variant: SymmetrizeVariant) -> SimilarityMatrix {
    let n = p.n();
    let v = &p.values;
    let values = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            variant.combine(v[[i, j]], v[[j, i]])
        }
    });
    SimilarityMatrix::joint(values)
}

/// Joint similarity plus the per-row calibration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicSimilarity {
    pub similarity: SimilarityMatrix,
    pub calibration: CalibrationParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityOptions {
    pub nu: f64,
    pub q_p: f64,
    pub bisection: BisectionSettings,
    pub variant: SymmetrizeVariant,
}

/// Calibrate, apply the kernel and symmetrize a distance matrix.
pub fn similarity_from_distances(
    d: &GeodesicDistanceMatrix,
    opts: &SimilarityOptions,
) -> Result<GeodesicSimilarity> {
    let kernel = KernelParams::new(opts.nu)?;
    if d.n() < 2 {
        return Ok(GeodesicSimilarity {
            similarity: SimilarityMatrix::joint(Array2::zeros((d.n(), d.n()))),
            calibration: CalibrationParams::identity(d.n()),
        });
    }
    let calibration = calibrate(&d.matrix, opts.nu, opts.q_p, &opts.bisection)?;
    let cond = conditional_similarity(&d.matrix, kernel, &calibration);
    Ok(GeodesicSimilarity {
        similarity: symmetrize(&cond, opts.variant),
        calibration,
    })
}

/// Geodesic distances on `g`, then calibrated kernel similarity, symmetrized.
pub fn graph_geodesic_similarity(
    g: &AttributedGraph,
    nu: f64,
    q_p: f64,
    metric: DistanceMetric,
    lambda: f64,
) -> Result<GeodesicSimilarity> {
    let d = geodesic_distances_weighted(g, metric, lambda, PathWeighting::Metric);
    similarity_from_distances(
        &d,
        &SimilarityOptions {
            nu,
            q_p,
            bisection: BisectionSettings::default(),
            variant: SymmetrizeVariant::Doubled,
        },
    )
}
