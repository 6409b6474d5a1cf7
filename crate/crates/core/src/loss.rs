//! Bregman divergences between similarity matrices and the fused objective
//! that matches latent similarities against complete-graph and priori-graph
//! input similarities.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{t_kernel, t_kernel_grad_over_d, SimilarityMatrix, SymmetrizeVariant};

/// Clamp applied to the second argument of the logistic divergence.
pub const LOGI_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BregmanKind {
    /// Squared euclidean distance, generated by `F(x) = x^2`.
    Sed,
    /// Logistic loss, generated by `F(x) = x log x + (1 - x) log(1 - x)`.
    #[default]
    Logi,
    SedPlusLogi,
}

fn sed(p: f64, q: f64) -> (f64, f64) {
    let r = p - q;
    (r * r, -2.0 * r)
}

fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// Value and derivative with respect to `q`.
fn logistic(p: f64, q: f64, eps: f64) -> (f64, f64) {
    let qc = q.clamp(eps, 1.0 - eps);
    let v = xlogy_ratio(p, qc) + xlogy_ratio(1.0 - p, 1.0 - qc);
    let g = if q == qc {
        -p / qc + (1.0 - p) / (1.0 - qc)
    } else {
        0.0
    };
    (v, g)
}

impl BregmanKind {
    /// Divergence of one entry and its derivative in the second argument.
    pub fn pointwise(self, p: f64, q: f64, eps: f64) -> (f64, f64) {
        match self {
            BregmanKind::Sed => sed(p, q),
            BregmanKind::Logi => logistic(p, q, eps),
            BregmanKind::SedPlusLogi => {
                let (a, da) = sed(p, q);
                let (b, db) = logistic(p, q, eps);
                (a + b, da + db)
            }
        }
    }

    pub fn divergence(self, p: &Array2<f64>, q: &Array2<f64>, eps: f64) -> Result<f64> {
        mean_off_diagonal(p, q, |a, b| self.pointwise(a, b, eps).0)
    }
}

fn mean_off_diagonal(
    p: &Array2<f64>,
    q: &Array2<f64>,
    f: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    if p.dim() != q.dim() || p.nrows() != p.ncols() {
        return Err(Error::Dimension(format!(
            "divergence between {:?} and {:?}",
            p.dim(),
            q.dim()
        )));
    }
    let n = p.nrows();
    if n < 2 {
        return Err(Error::Dimension("need at least two nodes for pairwise terms".into()));
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += f(p[[i, j]], q[[i, j]]);
            }
        }
    }
    Ok(s / (n * (n - 1)) as f64)
}

/// Mean of `(p - q)^2` over off-diagonal entries.
pub fn bregman_sed(p: &SimilarityMatrix, q: &SimilarityMatrix) -> Result<f64> {
    mean_off_diagonal(&p.values, &q.values, |a, b| sed(a, b).0)
}

/// Mean of `p log(p/q) + (1-p) log((1-p)/(1-q))` over off-diagonal entries,
/// with `q` clamped into `[eps, 1 - eps]`.
pub fn bregman_logistic(p: &SimilarityMatrix, q: &SimilarityMatrix, eps: f64) -> Result<f64> {
    mean_off_diagonal(&p.values, &q.values, |a, b| logistic(a, b, eps).0)
}

/// Pairwise euclidean distances between rows.
fn row_distances(z: &Array2<f64>) -> Array2<f64> {
    let m = z.nrows();
    let sq: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&r)).collect();
    let gram = z.dot(&z.t());
    Array2::from_shape_fn((m, m), |(a, b)| {
        if a == b {
            0.0
        } else {
            (sq[a] + sq[b] - 2.0 * gram[[a, b]]).max(0.0).sqrt()
        }
    })
}

/// Kernel values `kappa(||z_a - z_b||, nu)` with `rho = 0`, `sigma = 1`.
fn latent_kernel(dist: &Array2<f64>, nu: f64) -> Array2<f64> {
    let k0 = t_kernel(0.0, nu);
    let mut c = dist.mapv(|d| t_kernel(d, nu));
    c.diag_mut().fill(k0);
    c
}

/// Latent-space joint similarity over the complete graph of the rows of `z`.
pub fn latent_similarity(z: &Array2<f64>, nu_latent: f64, variant: SymmetrizeVariant) -> SimilarityMatrix {
    let dist = row_distances(z);
    let c = latent_kernel(&dist, nu_latent);
    let m = z.nrows();
    SimilarityMatrix::joint(Array2::from_shape_fn((m, m), |(a, b)| {
        if a == b {
            0.0
        } else {
            variant.combine(c[[a, b]], c[[b, a]])
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// Divergence against the complete-graph similarity.
    pub feature_term: f64,
    /// Divergence against the priori-graph similarity.
    pub structure_term: f64,
    pub alpha: f64,
    /// `feature_term + alpha * structure_term`
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedLoss {
    pub terms: LossTerms,
    /// `dTotal/dZ`, same shape as the full `Z`; rows outside the batch are zero.
    pub grad_z: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedLossOptions {
    pub nu_latent: f64,
    pub alpha: f64,
    pub kind: BregmanKind,
    pub variant: SymmetrizeVariant,
    pub eps: f64,
}

/// Both divergence terms on the `batch x batch` block, with the gradient
/// flowing back to the batch rows of `z`.
pub fn fused_loss(
    p_complete: &SimilarityMatrix,
    p_prior: &SimilarityMatrix,
    z: &Array2<f64>,
    batch: &[usize],
    opts: &FusedLossOptions,
) -> Result<FusedLoss> {
    let m = batch.len();
    if m < 2 {
        return Err(Error::Config(format!("batch of size {m} has no pairs")));
    }
    let n = z.nrows();
    if p_complete.n() != n || p_prior.n() != n {
        return Err(Error::Dimension(format!(
            "similarities over {} / {} nodes, embedding has {n} rows",
            p_complete.n(),
            p_prior.n()
        )));
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= n) {
        return Err(Error::Dimension(format!("batch index {bad} out of range 0..{n}")));
    }
    let nu = opts.nu_latent;
    let zb = z.select(Axis(0), batch);
    let dist = row_distances(&zb);
    let c = latent_kernel(&dist, nu);
    let pc = p_complete.submatrix(batch);
    let pp = p_prior.submatrix(batch);

    let norm = 1.0 / (m * (m - 1)) as f64;
    let (mut feat, mut structure) = (0.0, 0.0);
    // dL/dq for each ordered pair.
    let mut g = Array2::<f64>::zeros((m, m));
    for a in 0..m {
        for b in 0..m {
            if a == b {
                continue;
            }
            let q = opts.variant.combine(c[[a, b]], c[[b, a]]);
            let (vf, gf) = opts.kind.pointwise(pc[[a, b]], q, opts.eps);
            let (vs, gs) = opts.kind.pointwise(pp[[a, b]], q, opts.eps);
            feat += vf;
            structure += vs;
            g[[a, b]] = norm * (gf + opts.alpha * gs);
        }
    }
    feat *= norm;
    structure *= norm;

    // Chain through symmetrization, kernel and the euclidean norm. Every
    // unordered pair's distance feeds both c_ab and c_ba, each of which
    // feeds both q_ab and q_ba.
    let mut w = Array2::<f64>::zeros((m, m));
    for a in 0..m {
        for b in (a + 1)..m {
            let d_sym = opts.variant.d_first(c[[b, a]]) + opts.variant.d_first(c[[a, b]]);
            let v = (g[[a, b]] + g[[b, a]]) * d_sym * t_kernel_grad_over_d(c[[a, b]], dist[[a, b]], nu);
            w[[a, b]] = v;
            w[[b, a]] = v;
        }
    }
    // dL/dz_a = sum_b w_ab (z_a - z_b)
    let rowsum = w.sum_axis(Axis(1));
    let mut gb = &zb * &rowsum.insert_axis(Axis(1));
    gb -= &w.dot(&zb);

    let mut grad_z = Array2::zeros(z.raw_dim());
    for (k, &i) in batch.iter().enumerate() {
        let mut row = grad_z.row_mut(i);
        row += &gb.row(k);
    }
    Ok(FusedLoss {
        terms: LossTerms {
            feature_term: feat,
            structure_term: structure,
            alpha: opts.alpha,
            total: feat + opts.alpha * structure,
        },
        grad_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn joint(v: Array2<f64>) -> SimilarityMatrix {
        SimilarityMatrix::joint(v)
    }

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.random_range(0.0..1.0);
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        a
    }

    fn opts(kind: BregmanKind, alpha: f64) -> FusedLossOptions {
        FusedLossOptions {
            nu_latent: 0.5,
            alpha,
            kind,
            variant: SymmetrizeVariant::Doubled,
            eps: LOGI_EPS,
        }
    }

    #[test]
    fn sed_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = joint(random_sym(&mut rng, 4));
        assert_eq!(bregman_sed(&p, &p).unwrap(), 0.0);
        let ones = joint(Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 0.0 } else { 1.0 }));
        let zeros = joint(Array2::zeros((3, 3)));
        assert_eq!(bregman_sed(&ones, &zeros).unwrap(), 1.0);

        let q = joint(random_sym(&mut rng, 4));
        let mut s = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    s += (p.values[[i, j]] - q.values[[i, j]]).powi(2);
                }
            }
        }
        assert_abs_diff_eq!(bregman_sed(&p, &q).unwrap(), s / 12.0, epsilon = 1e-15);
        assert!(bregman_sed(&p, &joint(Array2::zeros((3, 3)))).is_err());
    }

    #[test]
    fn logistic_examples() {
        let p = joint(array![[0.0, 0.5], [0.5, 0.0]]);
        let q = joint(array![[0.0, 0.25], [0.25, 0.0]]);
        assert_abs_diff_eq!(bregman_logistic(&p, &q, LOGI_EPS).unwrap(), 0.14384103622589042, epsilon = 1e-14);
        let r = joint(array![[0.0, 0.3], [0.3, 0.0]]);
        assert_abs_diff_eq!(bregman_logistic(&r, &r, LOGI_EPS).unwrap(), 0.0, epsilon = 1e-15);
        // Zero p with q at the clamp boundary stays finite.
        let z = joint(array![[0.0, 0.0], [0.0, 0.0]]);
        let one = joint(array![[0.0, 1.0], [1.0, 0.0]]);
        assert!(bregman_logistic(&z, &one, LOGI_EPS).unwrap().is_finite());
    }

    #[test]
    fn latent_similarity_identical_rows() {
        let z = array![[1.0, 2.0], [1.0, 2.0], [5.0, -3.0]];
        let q = latent_similarity(&z, 2.0, SymmetrizeVariant::Doubled);
        let k0 = t_kernel(0.0, 2.0);
        assert_abs_diff_eq!(q.values[[0, 1]], 2.0 * k0 - 2.0 * k0 * k0, epsilon = 1e-15);
    }

    #[test]
    fn latent_similarity_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Array2::from_shape_simple_fn((5, 3), || rng.random_range(-2.0..2.0));
        let nu = 0.8;
        let q = latent_similarity(&z, nu, SymmetrizeVariant::Doubled);
        use statrs::function::gamma::gamma;
        let c0 = (2.0 * std::f64::consts::PI).sqrt() * gamma((nu + 1.0) / 2.0)
            / ((nu * std::f64::consts::PI).sqrt() * gamma(nu / 2.0));
        for a in 0..5 {
            for b in 0..5 {
                if a == b {
                    assert_eq!(q.values[[a, b]], 0.0);
                    continue;
                }
                let d: f64 = (0..3).map(|k| (z[[a, k]] - z[[b, k]]).powi(2)).sum::<f64>().sqrt();
                let c = c0 * (1.0 + d * d / nu).powf(-(nu + 1.0) / 2.0);
                assert_abs_diff_eq!(q.values[[a, b]], 2.0 * c - 2.0 * c * c, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn scaling_latent_distances_lowers_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Small nu keeps kappa below 0.5, where p + p - 2p^2 is increasing.
        let z = Array2::from_shape_simple_fn((6, 2), || rng.random_range(-1.0..1.0));
        let a = latent_similarity(&z, 0.3, SymmetrizeVariant::Doubled);
        let b = latent_similarity(&(&z * 3.0), 0.3, SymmetrizeVariant::Doubled);
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!(y <= x);
        }
    }

    #[test]
    fn fused_loss_term_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pc = joint(random_sym(&mut rng, 6));
        let pp = joint(random_sym(&mut rng, 6));
        let z = Array2::from_shape_simple_fn((6, 3), || rng.random_range(-1.0..1.0));
        let batch: Vec<usize> = (0..6).collect();
        let l = fused_loss(&pc, &pp, &z, &batch, &opts(BregmanKind::Logi, 0.0)).unwrap();
        assert_eq!(l.terms.total, l.terms.feature_term);

        let l = fused_loss(&pc, &pc, &z, &batch, &opts(BregmanKind::Sed, 2.5)).unwrap();
        assert_abs_diff_eq!(l.terms.total, 3.5 * l.terms.feature_term, epsilon = 1e-14);

        let q = latent_similarity(&z, 0.5, SymmetrizeVariant::Doubled);
        assert_abs_diff_eq!(l.terms.feature_term, bregman_sed(&pc, &q).unwrap(), epsilon = 1e-14);

        assert!(fused_loss(&pc, &pp, &z, &[3], &opts(BregmanKind::Sed, 1.0)).is_err());
        assert!(fused_loss(&pc, &pp, &z, &[0, 9], &opts(BregmanKind::Sed, 1.0)).is_err());
    }

    #[test]
    fn fused_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 7;
        let pc = joint(random_sym(&mut rng, n));
        let pp = joint(random_sym(&mut rng, n));
        let z = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.0..1.0));
        let batch = vec![4, 0, 2, 6, 5];
        for kind in [BregmanKind::Sed, BregmanKind::Logi, BregmanKind::SedPlusLogi] {
            for variant in [SymmetrizeVariant::Doubled, SymmetrizeVariant::Union] {
                let o = FusedLossOptions { variant, ..opts(kind, 0.7) };
                let l = fused_loss(&pc, &pp, &z, &batch, &o).unwrap();
                let h = 1e-5;
                for i in 0..n {
                    for k in 0..3 {
                        let mut zp = z.clone();
                        zp[[i, k]] += h;
                        let mut zm = z.clone();
                        zm[[i, k]] -= h;
                        let fd = (fused_loss(&pc, &pp, &zp, &batch, &o).unwrap().terms.total
                            - fused_loss(&pc, &pp, &zm, &batch, &o).unwrap().terms.total)
                            / (2.0 * h);
                        let an = l.grad_z[[i, k]];
                        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
                        assert!(rel <= 1e-4, "{kind:?} {variant:?} z[{i},{k}]: fd {fd} an {an}");
                    }
                }
                for i in [1, 3] {
                    assert!(l.grad_z.row(i).iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn coincident_rows_have_zero_pair_gradient() {
        let z = array![[0.5, 0.5], [0.5, 0.5]];
        let p = joint(array![[0.0, 0.2], [0.2, 0.0]]);
        let l = fused_loss(&p, &p, &z, &[0, 1], &opts(BregmanKind::Sed, 1.0)).unwrap();
        assert!(l.grad_z.iter().all(|&v| v == 0.0 && v.is_finite()));
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 6;
        let pc = random_sym(&mut rng, n);
        let pp = random_sym(&mut rng, n);
        let z = Array2::from_shape_simple_fn((n, 2), || rng.random_range(-1.0..1.0));
        let perm = [3, 0, 5, 1, 4, 2];
        let pc2 = Array2::from_shape_fn((n, n), |(i, j)| pc[[perm[i], perm[j]]]);
        let pp2 = Array2::from_shape_fn((n, n), |(i, j)| pp[[perm[i], perm[j]]]);
        let z2 = z.select(Axis(0), &perm);
        let all: Vec<usize> = (0..n).collect();
        let o = opts(BregmanKind::SedPlusLogi, 1.3);
        let a = fused_loss(&joint(pc), &joint(pp), &z, &all, &o).unwrap();
        let b = fused_loss(&joint(pc2), &joint(pp2), &z2, &all, &o).unwrap();
        assert_abs_diff_eq!(a.terms.total, b.terms.total, epsilon = 1e-13);
    }

    proptest! {
        #[test]
        fn divergences_nonnegative_and_zero_iff_equal(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            for kind in [BregmanKind::Sed, BregmanKind::Logi, BregmanKind::SedPlusLogi] {
                let (v, _) = kind.pointwise(p, q, LOGI_EPS);
                prop_assert!(v >= -1e-15);
                let (same, _) = kind.pointwise(p, p, LOGI_EPS);
                // Logistic compares p with the clamped copy of itself.
                prop_assert!(same.abs() < 1e-6);
                if (p - q).abs() > 1e-3 {
                    prop_assert!(v > 0.0);
                }
            }
        }
    }
}
