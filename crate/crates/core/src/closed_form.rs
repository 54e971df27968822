//! Closed-form posterior quantities of the spatial model given the
//! coregionalization factor `M` and the spatial proportions `R`.
//!
//! Writing `Θ = G M⁻¹`, the columns of `Y M⁻¹` decouple: column `j` is a
//! regression on `X` with a spatial effect of covariance `r_j W_φ` and noise
//! of variance `1 − r_j`. The joint diagonalisation
//! `W_φ⁻¹ = U⁻ᵀU⁻¹`, `I − H = U⁻ᵀKU⁻¹` turns every solve into scalar
//! operations on the eigenvalues `k_i`:
//!
//! * posterior mean of `θ_j`: `U diag(w) U⁻¹ (Y M⁻¹)_j`,
//!   `w_i = r k_i / (r k_i + 1 − r)`;
//! * posterior variance of `θ_j` with `B` integrated out:
//!   `U diag(d) Uᵀ`, `d_i = r(1 − r) / (r k_i + 1 − r)`.
//!
//! Both expressions are continuous on `r ∈ [0, 1]`; the only singular case,
//! `r = 1` with `k_i = 0`, takes its limit `w_i = 0`, `d_i = 1`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{inverse, kron, sym_eigen_sorted, symmetrize, vec};
use crate::spatial::ProjectedSpectral;
use crate::stats::two_sided_z;

#[derive(Debug, Clone)]
pub struct ConditionedPosterior {
    /// Conditioned estimator `E[B | Y, M, R]`.
    pub b_tilde: DMatrix<f64>,
    /// `E[G | Y, M, R]`.
    pub g_hat: DMatrix<f64>,
    /// Covariance of `vec(B)`, column-major ordering.
    pub var_b: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub r: DVector<f64>,
}

impl ConditionedPosterior {
    /// Marginal variances of `B_ij` arranged as a `q × k` matrix.
    pub fn marginal_variances(&self) -> DMatrix<f64> {
        let (q, k) = self.b_tilde.shape();
        DMatrix::from_fn(q, k, |i, j| self.var_b[(j * q + i, j * q + i)].max(0.0))
    }
}

/// Mean weight and variance factor for one eigenvalue `k` and proportion `r`.
fn spectral_factors(k: f64, positive: bool, r: f64) -> (f64, f64) {
    if !positive {
        return (0.0, r);
    }
    let denom = r * k + 1.0 - r;
    (r * k / denom, r * (1.0 - r) / denom)
}

fn check_inputs(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    m: &DMatrix<f64>,
    r: &DVector<f64>,
    proj: &ProjectedSpectral,
) -> Result<()> {
    let (n, k) = y.shape();
    if x.nrows() != n || proj.u.nrows() != n {
        return Err(Error::Dimension(format!(
            "Y has {n} rows, X has {}, spatial structure has {}",
            x.nrows(),
            proj.u.nrows()
        )));
    }
    if proj.xtx_inv.nrows() != x.ncols() {
        return Err(Error::Dimension(
            "projected spectral basis was built for a different design".into(),
        ));
    }
    if m.shape() != (k, k) || r.len() != k {
        return Err(Error::Dimension(format!("M must be {k}x{k} and R length {k}")));
    }
    if let Some(bad) = r.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidParameter(format!(
            "spatial proportion {bad} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Assembles `Σ_j M_ja M_jb V_j` into the `(qk) × (qk)` covariance of `vec(B)`.
fn coregionalized_covariance(m: &DMatrix<f64>, blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let k = m.nrows();
    let q = blocks[0].nrows();
    let mut out = DMatrix::zeros(q * k, q * k);
    for a in 0..k {
        for b in 0..k {
            let mut block = DMatrix::zeros(q, q);
            for (j, v) in blocks.iter().enumerate() {
                let w = m[(j, a)] * m[(j, b)];
                if w != 0.0 {
                    block += v * w;
                }
            }
            out.view_mut((a * q, b * q), (q, q)).copy_from(&block);
        }
    }
    symmetrize(&mut out);
    out
}

pub fn conditioned_estimate(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    m: &DMatrix<f64>,
    r: &DVector<f64>,
    proj: &ProjectedSpectral,
) -> Result<ConditionedPosterior> {
    check_inputs(y, x, m, r, proj)?;
    let (n, k) = y.shape();
    let m_inv = inverse(m, "coregionalization matrix M")?;
    let coef = proj.coef_map(x);
    let b_hat = &proj.xtx_inv * x.transpose() * y;

    let spectral_y = &proj.u_inv * (y * &m_inv);
    let mut theta_spec = DMatrix::zeros(n, k);
    let mut blocks = Vec::with_capacity(k);
    for j in 0..k {
        let rj = r[j];
        let mut d = DVector::zeros(n);
        for i in 0..n {
            let (w, var) = spectral_factors(proj.k[i], proj.k_star[i], rj);
            theta_spec[(i, j)] = w * spectral_y[(i, j)];
            d[i] = var;
        }
        let scaled = DMatrix::from_fn(coef.nrows(), n, |a, i| coef[(a, i)] * d[i]);
        blocks.push(&proj.xtx_inv * (1.0 - rj) + scaled * coef.transpose());
    }
    let g_hat = &proj.u * theta_spec * m;
    let b_tilde = &b_hat - &proj.xtx_inv * x.transpose() * &g_hat;
    let var_b = coregionalized_covariance(m, &blocks);
    Ok(ConditionedPosterior {
        b_tilde,
        g_hat,
        var_b,
        m: m.clone(),
        r: r.clone(),
    })
}

/// Limit of the conditioned covariance of `vec(B)` as `R = rI → I`:
/// `(MᵀM) ⊗ (XᵀX)⁻¹Xᵀ(W_φ − U K* Uᵀ)X(XᵀX)⁻¹`.
pub fn limiting_variance(x: &DMatrix<f64>, m: &DMatrix<f64>, proj: &ProjectedSpectral) -> DMatrix<f64> {
    let coef = proj.coef_map(x);
    let n = proj.k.len();
    let kept = DMatrix::from_fn(coef.nrows(), n, |a, i| {
        if proj.k_star[i] {
            0.0
        } else {
            coef[(a, i)]
        }
    });
    let inner = kept * coef.transpose();
    let mut out = kron(&(m.transpose() * m), &inner);
    symmetrize(&mut out);
    out
}

/// Inverse-Wishart parameters `(dof, scale)` of the limiting posterior of
/// `MᵀM` as `R = rI → I`: `dof = v + n − q`, `scale = vΣ0 + YᵀU⁻ᵀK*U⁻¹Y`.
pub fn limiting_m_posterior(
    y: &DMatrix<f64>,
    proj: &ProjectedSpectral,
    v: f64,
    sigma0: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>)> {
    let (n, k) = y.shape();
    if sigma0.shape() != (k, k) || proj.u.nrows() != n {
        return Err(Error::Dimension("limiting M posterior inputs".into()));
    }
    let mut projected = &proj.u_inv * y;
    for i in 0..n {
        if !proj.k_star[i] {
            projected.row_mut(i).fill(0.0);
        }
    }
    let mut scale = sigma0 * v + projected.transpose() * &projected;
    symmetrize(&mut scale);
    let dof = v + n as f64 - proj.xtx_inv.nrows() as f64;
    Ok((dof, scale))
}

/// Sampling covariances, over repeated data generation with fixed covariates,
/// of the conditioned estimator (`M = A`, `R = P`, `W_φ = V_φ`) and the
/// non-spatial estimator. Returns `(var_b_tilde, var_b_hat)`.
pub fn dg_variance_identities(
    x: &DMatrix<f64>,
    a: &DMatrix<f64>,
    rho: &DVector<f64>,
    proj: &ProjectedSpectral,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = a.nrows();
    if a.ncols() != k || rho.len() != k {
        return Err(Error::Dimension(format!("A must be {k}x{k} and P of length {k}")));
    }
    if x.ncols() != proj.xtx_inv.nrows() || x.nrows() != proj.u.nrows() {
        return Err(Error::Dimension("design does not match the spectral basis".into()));
    }
    let coef = proj.coef_map(x);
    let n = proj.k.len();
    let spatial = &coef * coef.transpose();
    let mut ns_blocks = Vec::with_capacity(k);
    let mut cf_blocks = Vec::with_capacity(k);
    for j in 0..k {
        let p = rho[j];
        let ns = &proj.xtx_inv * (1.0 - p) + &spatial * p;
        let reduction = DMatrix::from_fn(coef.nrows(), n, |c, i| {
            let ki = proj.k[i];
            let m1 = if proj.k_star[i] {
                p * p * ki / (p * ki + 1.0 - p)
            } else {
                0.0
            };
            coef[(c, i)] * m1
        }) * coef.transpose();
        cf_blocks.push(&ns - reduction);
        ns_blocks.push(ns);
    }
    Ok((
        coregionalized_covariance(a, &cf_blocks),
        coregionalized_covariance(a, &ns_blocks),
    ))
}

/// Elementwise interval bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMatrix {
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
}

impl IntervalMatrix {
    pub fn contains(&self, i: usize, j: usize, value: f64) -> bool {
        self.lower[(i, j)] <= value && value <= self.upper[(i, j)]
    }
}

/// `B̃_ij ± z_{(1+level)/2} sqrt(Var(B_ij))`.
pub fn conditional_intervals(cp: &ConditionedPosterior, level: f64) -> Result<IntervalMatrix> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("interval level {level} outside (0, 1)")));
    }
    let z = two_sided_z(level);
    let half = cp.marginal_variances().map(|v| z * v.sqrt());
    Ok(IntervalMatrix {
        lower: &cp.b_tilde - &half,
        upper: &cp.b_tilde + &half,
    })
}

/// Symmetric square root factor `F` with `F Fᵀ = cov`, for a PSD matrix.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen_sorted(cov)?;
    let scale = vals.amax().max(f64::MIN_POSITIVE);
    if vals[0] < -1e-10 * scale {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: vals[0],
        });
    }
    let roots = vals.map(|v| v.max(0.0).sqrt());
    Ok(&vecs * DMatrix::from_diagonal(&roots))
}

/// Draws of `B ~ N(vec(B̃), var_B)`.
pub fn sample_conditioned<R: Rng + ?Sized>(
    cp: &ConditionedPosterior,
    count: usize,
    rng: &mut R,
) -> Result<Vec<DMatrix<f64>>> {
    let (q, k) = cp.b_tilde.shape();
    let factor = psd_factor(&cp.var_b)?;
    let dim = q * k;
    let mean = vec(&cp.b_tilde);
    let mut draws = Vec::with_capacity(count);
    for _ in 0..count {
        let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = &mean + &factor * z;
        draws.push(DMatrix::from_column_slice(q, k, v.as_slice()));
    }
    Ok(draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::design_with_intercept;
    use crate::linalg::rel_frobenius;
    use crate::nonspatial::fit_nonspatial;
    use crate::rng::rng_from_seed;
    use crate::spatial::{projected_spectral, spectral_decompose, AdjacencyGraph, PrecisionKind, ScaledPrecision};

    struct Fixture {
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        m: DMatrix<f64>,
        proj: ProjectedSpectral,
    }

    fn fixture(n: usize, seed: u64) -> Fixture {
        let mut rng = rng_from_seed(seed);
        let graph = AdjacencyGraph::path(n).unwrap();
        let prec = ScaledPrecision::build(&graph, PrecisionKind::Car, 0.9).unwrap();
        let spec = spectral_decompose(&prec).unwrap();
        let x1 = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = design_with_intercept(&x1);
        let y = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let m = DMatrix::from_row_slice(2, 2, &[1.2, 0.4, 0.0, 0.8]);
        let proj = projected_spectral(&prec, &spec, &x).unwrap();
        Fixture { x, y, m, proj }
    }

    #[test]
    fn recovery_identity() {
        let f = fixture(7, 1);
        let r = DVector::from_vec(vec![0.6, 0.3]);
        let cp = conditioned_estimate(&f.y, &f.x, &f.m, &r, &f.proj).unwrap();
        let b_hat = &f.proj.xtx_inv * f.x.transpose() * &f.y;
        let rec = &cp.b_tilde + &f.proj.xtx_inv * f.x.transpose() * &cp.g_hat;
        assert!((rec - b_hat).amax() < 1e-12);
    }

    #[test]
    fn adjusted_outcome_reproduces_estimator() {
        let f = fixture(7, 2);
        let r = DVector::from_vec(vec![0.5, 0.8]);
        let cp = conditioned_estimate(&f.y, &f.x, &f.m, &r, &f.proj).unwrap();
        let y_star = &f.y - &cp.g_hat;
        let ns = fit_nonspatial(&y_star, &f.x, 2.0, &DMatrix::identity(2, 2)).unwrap();
        assert!((ns.b_hat - &cp.b_tilde).amax() < 1e-10);
    }

    #[test]
    fn zero_spatial_share_is_nonspatial() {
        let f = fixture(6, 3);
        let r = DVector::from_vec(vec![1e-12, 1e-12]);
        let cp = conditioned_estimate(&f.y, &f.x, &f.m, &r, &f.proj).unwrap();
        let b_hat = &f.proj.xtx_inv * f.x.transpose() * &f.y;
        assert!((&cp.b_tilde - b_hat).amax() < 1e-6);
        assert!(cp.g_hat.amax() < 1e-6);
        let expected = kron(&(f.m.transpose() * &f.m), &f.proj.xtx_inv);
        assert!(rel_frobenius(&cp.var_b, &expected) < 1e-6);
    }

    #[test]
    fn boundary_one_equals_limit() {
        let f = fixture(6, 4);
        let r = DVector::from_vec(vec![1.0, 1.0]);
        let cp = conditioned_estimate(&f.y, &f.x, &f.m, &r, &f.proj).unwrap();
        let lim = limiting_variance(&f.x, &f.m, &f.proj);
        assert!(rel_frobenius(&cp.var_b, &lim) < 1e-12);
    }

    #[test]
    fn limiting_variance_identity_case() {
        // W_φ = I, X = 1: W − UK*Uᵀ = (1/n)J, so the limit is MᵀM / n.
        let n = 5;
        let prec = ScaledPrecision::identity(n);
        let spec = spectral_decompose(&prec).unwrap();
        let x = DMatrix::from_element(n, 1, 1.0);
        let proj = projected_spectral(&prec, &spec, &x).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]);
        let lim = limiting_variance(&x, &m, &proj);
        let expected = (m.transpose() * &m) / n as f64;
        assert!((lim - expected).amax() < 1e-12);
    }

    #[test]
    fn limiting_scale_annihilates_design() {
        let f = fixture(8, 5);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let y = &f.x * b;
        let s0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 2.0]);
        let (dof, scale) = limiting_m_posterior(&y, &f.proj, 3.0, &s0).unwrap();
        assert_eq!(dof, 3.0 + 8.0 - 2.0);
        assert!((scale - &s0 * 3.0).amax() < 1e-8);
    }

    #[test]
    fn identities_without_spatial_share() {
        let f = fixture(6, 6);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let (cf, ns) = dg_variance_identities(&f.x, &a, &DVector::zeros(2), &f.proj).unwrap();
        let expected = kron(&(a.transpose() * &a), &f.proj.xtx_inv);
        assert!(rel_frobenius(&cf, &expected) < 1e-12);
        assert!(rel_frobenius(&ns, &expected) < 1e-12);
    }

    #[test]
    fn interval_quantile() {
        let cp = ConditionedPosterior {
            b_tilde: DMatrix::zeros(1, 2),
            g_hat: DMatrix::zeros(1, 2),
            var_b: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])),
            m: DMatrix::identity(2, 2),
            r: DVector::zeros(2),
        };
        let iv = conditional_intervals(&cp, 0.95).unwrap();
        assert!((iv.lower[(0, 0)] + 1.959964).abs() < 1e-6);
        assert!((iv.upper[(0, 0)] - 1.959964).abs() < 1e-6);
        assert_eq!(iv.lower[(0, 1)], 0.0);
        assert_eq!(iv.upper[(0, 1)], 0.0);
        assert!(conditional_intervals(&cp, 1.0).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = fixture(6, 7);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let r = DVector::from_vec(vec![0.5, 0.5]);
        assert!(matches!(
            conditioned_estimate(&f.y, &f.x, &singular, &r, &f.proj),
            Err(Error::Singular(_))
        ));
        let bad_r = DVector::from_vec(vec![0.5, 1.5]);
        assert!(conditioned_estimate(&f.y, &f.x, &f.m, &bad_r, &f.proj).is_err());
        let not_psd = ConditionedPosterior {
            b_tilde: DMatrix::zeros(1, 1),
            g_hat: DMatrix::zeros(1, 1),
            var_b: DMatrix::from_element(1, 1, -1.0),
            m: DMatrix::identity(1, 1),
            r: DVector::zeros(1),
        };
        assert!(sample_conditioned(&not_psd, 1, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn conditioned_draw_moments() {
        let f = fixture(6, 8);
        let r = DVector::from_vec(vec![0.7, 0.4]);
        let cp = conditioned_estimate(&f.y, &f.x, &f.m, &r, &f.proj).unwrap();
        let count = 40_000;
        let draws = sample_conditioned(&cp, count, &mut rng_from_seed(9)).unwrap();
        let dim = 4;
        let mut mean = DVector::zeros(dim);
        for d in &draws {
            mean += vec(d);
        }
        mean /= count as f64;
        let mut cov = DMatrix::zeros(dim, dim);
        for d in &draws {
            let c = vec(d) - &mean;
            cov += &c * c.transpose();
        }
        cov /= count as f64 - 1.0;
        for i in 0..dim {
            let se = (cp.var_b[(i, i)] / count as f64).sqrt();
            assert!((mean[i] - vec(&cp.b_tilde)[i]).abs() < 4.0 * se);
        }
        assert!(rel_frobenius(&cov, &cp.var_b) < 0.03);
        let again = sample_conditioned(&cp, 3, &mut rng_from_seed(9)).unwrap();
        assert_eq!(again[2], draws[2]);
    }
}
