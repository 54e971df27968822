//! Conjugate multivariate regression with a flat prior on the coefficients
//! and an inverse-Wishart prior on the outcome covariance.
//!
//! Inverse-Wishart convention: `Σ ~ IW(ν, S)` has density
//! `∝ |Σ|^{-(ν+k+1)/2} exp(−tr(S Σ⁻¹)/2)`, equivalently `Σ⁻¹ ~ W(ν, S⁻¹)`,
//! so `E[Σ⁻¹] = ν S⁻¹` and `E[Σ] = S / (ν − k − 1)`. With prior scale
//! `S = νΣ0` this gives `E[Σ⁻¹] = Σ0⁻¹`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, upper_triangular_inverse};
use crate::spatial::design_gram_inverse;

/// Prior scale with diagonal `‖(I − H) y_j‖² / (n − p − 1)`.
pub fn default_sigma0(y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, q) = x.shape();
    if n <= q {
        return Err(Error::InsufficientData(format!(
            "need more regions ({n}) than design columns ({q})"
        )));
    }
    let xtx_inv = design_gram_inverse(x)?;
    let resid = y - x * (&xtx_inv * x.transpose() * y);
    let mut diag = DVector::zeros(y.ncols());
    for j in 0..y.ncols() {
        let rss = resid.column(j).norm_squared();
        let scale = y.column(j).norm_squared().max(f64::MIN_POSITIVE);
        if rss <= 1e-24 * scale {
            return Err(Error::DegenerateScale(format!(
                "outcome {j} is fitted exactly by the design"
            )));
        }
        diag[j] = rss / (n - q) as f64;
    }
    Ok(DMatrix::from_diagonal(&diag))
}

/// Exact posterior `Σ | Y ~ IW(v*, Σ*)`, `vec(B) | Σ, Y ~ N(vec(B̂), Σ ⊗ (XᵀX)⁻¹)`.
#[derive(Debug, Clone)]
pub struct NonSpatialPosterior {
    pub b_hat: DMatrix<f64>,
    pub v_star: f64,
    pub sigma_star: DMatrix<f64>,
    /// Lower Cholesky factor of `XᵀX`.
    pub xtx_chol: DMatrix<f64>,
    pub xtx_inv: DMatrix<f64>,
}

impl NonSpatialPosterior {
    pub fn k(&self) -> usize {
        self.b_hat.ncols()
    }

    /// Marginal posterior variance of each `B_ij`:
    /// `E[Σ_jj] (XᵀX)⁻¹_ii` (finite when `v* > k + 1`).
    pub fn marginal_variances(&self) -> DMatrix<f64> {
        let k = self.k() as f64;
        let denom = self.v_star - k - 1.0;
        DMatrix::from_fn(self.b_hat.nrows(), self.b_hat.ncols(), |i, j| {
            self.sigma_star[(j, j)] / denom * self.xtx_inv[(i, i)]
        })
    }
}

pub fn fit_nonspatial(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    v: f64,
    sigma0: &DMatrix<f64>,
) -> Result<NonSpatialPosterior> {
    let (n, k) = y.shape();
    if x.nrows() != n {
        return Err(Error::Dimension("X and Y row counts differ".into()));
    }
    if sigma0.shape() != (k, k) {
        return Err(Error::Dimension("Sigma0 must be k x k".into()));
    }
    if v <= k as f64 - 1.0 {
        return Err(Error::InvalidParameter(format!(
            "inverse-Wishart degrees of freedom {v} must exceed k - 1 = {}",
            k - 1
        )));
    }
    cholesky(sigma0)?;
    let xtx_inv = design_gram_inverse(x)?;
    let xtx = x.transpose() * x;
    let xtx_chol = cholesky(&xtx)?.l();
    let b_hat = &xtx_inv * x.transpose() * y;
    let resid = y - x * &b_hat;
    let mut sigma_star = sigma0 * v + resid.transpose() * &resid;
    crate::linalg::symmetrize(&mut sigma_star);
    Ok(NonSpatialPosterior {
        b_hat,
        v_star: v + n as f64,
        sigma_star,
        xtx_chol,
        xtx_inv,
    })
}

/// Lower-triangular Bartlett factor `A` with `AAᵀ ~ W(ν, I_k)`.
fn bartlett_factor<R: Rng + ?Sized>(dof: f64, k: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k {
        let chi = ChiSquared::new(dof - i as f64)
            .map_err(|e| Error::InvalidParameter(format!("Bartlett chi-square: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    Ok(a)
}

/// Draws `Σ ~ IW(dof, scale)` and returns `(Σ, F)` with `Σ = F Fᵀ`.
///
/// With `scale = L Lᵀ` and Bartlett `A`, `Σ⁻¹ = L⁻ᵀ A Aᵀ L⁻¹ ~ W(dof, scale⁻¹)`,
/// hence `Σ = (L A⁻ᵀ)(L A⁻ᵀ)ᵀ`. Only triangular solves are needed.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    dof: f64,
    scale_chol: &DMatrix<f64>,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = scale_chol.nrows();
    let a = bartlett_factor(dof, k, rng)?;
    let a_inv_t = upper_triangular_inverse(&a.transpose())?;
    let f = scale_chol * a_inv_t;
    let sigma = &f * f.transpose();
    Ok((sigma, f))
}

#[derive(Debug, Clone)]
pub struct NonSpatialDraw {
    pub b: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

pub fn sample_nonspatial<R: Rng + ?Sized>(
    post: &NonSpatialPosterior,
    count: usize,
    rng: &mut R,
) -> Result<Vec<NonSpatialDraw>> {
    if count == 0 {
        return Err(Error::InvalidParameter("draw count must be at least 1".into()));
    }
    let (q, k) = post.b_hat.shape();
    let scale_chol = cholesky(&post.sigma_star)?.l();
    // (XᵀX)⁻¹ = L_x⁻ᵀ L_x⁻¹
    let lx_inv_t = upper_triangular_inverse(&post.xtx_chol.transpose())?;
    let mut draws = Vec::with_capacity(count);
    for _ in 0..count {
        let (sigma, f) = sample_inverse_wishart(post.v_star, &scale_chol, rng)?;
        let z = DMatrix::from_fn(q, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = &post.b_hat + &lx_inv_t * z * f.transpose();
        draws.push(NonSpatialDraw { b, sigma });
    }
    Ok(draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::design_with_intercept;
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;

    fn random_problem(n: usize, p: usize, k: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = rng_from_seed(seed);
        let x1 = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        (design_with_intercept(&x1), y)
    }

    #[test]
    fn sigma0_exact_fit_is_degenerate() {
        let (x, _) = random_problem(10, 1, 1, 1);
        let y = &x * DMatrix::from_column_slice(2, 1, &[1.0, -2.0]);
        assert!(matches!(default_sigma0(&y, &x), Err(Error::DegenerateScale(_))));
    }

    #[test]
    fn sigma0_basis_vector() {
        let n = 7;
        let x = DMatrix::from_element(n, 1, 1.0);
        let mut y = DMatrix::zeros(n, 1);
        y[(0, 0)] = 1.0;
        let s = default_sigma0(&y, &x).unwrap();
        let expected = (1.0 - 1.0 / n as f64) / (n as f64 - 1.0);
        assert_relative_eq!(s[(0, 0)], expected, epsilon = 1e-14);
    }

    #[test]
    fn sigma0_matches_brute_force() {
        let (x, y) = random_problem(30, 2, 3, 5);
        let s = default_sigma0(&y, &x).unwrap();
        for j in 0..3 {
            // residual by solving the normal equations column by column
            let beta = (x.transpose() * &x).lu().solve(&(x.transpose() * y.column(j))).unwrap();
            let r = y.column(j) - &x * beta;
            let mut rss = 0.0;
            for v in r.iter() {
                rss += v * v;
            }
            assert_relative_eq!(s[(j, j)], rss / 27.0, max_relative = 1e-12);
            for i in 0..3 {
                if i != j {
                    assert_eq!(s[(i, j)], 0.0);
                }
            }
        }
        let (x, y) = random_problem(3, 2, 1, 5);
        assert!(matches!(default_sigma0(&y, &x), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn exact_fit_recovers_coefficients() {
        let (x, _) = random_problem(12, 2, 2, 9);
        let b0 = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 0.5, 2.0, -0.3, 0.0]);
        let y = &x * &b0;
        let post = fit_nonspatial(&y, &x, 2.0, &DMatrix::identity(2, 2)).unwrap();
        assert!((post.b_hat - b0).norm() < 1e-10);
    }

    #[test]
    fn sigma_star_brute_force() {
        let (x, y) = random_problem(10, 1, 2, 11);
        let s0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let post = fit_nonspatial(&y, &x, 3.0, &s0).unwrap();
        let mut expected = &s0 * 3.0;
        for r in 0..10 {
            let fitted = x.row(r) * &post.b_hat;
            let e = y.row(r) - fitted;
            expected += e.transpose() * e;
        }
        assert!((post.sigma_star - expected).norm() < 1e-12);
        assert_eq!(post.v_star, 13.0);
    }

    #[test]
    fn b_hat_independent_of_prior_and_equals_columnwise_ols() {
        let (x, y) = random_problem(20, 2, 3, 13);
        let a = fit_nonspatial(&y, &x, 3.0, &DMatrix::identity(3, 3)).unwrap();
        let b = fit_nonspatial(&y, &x, 10.0, &(DMatrix::identity(3, 3) * 5.0)).unwrap();
        assert!((&a.b_hat - &b.b_hat).norm() < 1e-14);
        for j in 0..3 {
            let qr = x.clone().qr();
            let rhs = qr.q().transpose() * y.column(j);
            let beta = qr.r().solve_upper_triangular(&rhs).unwrap();
            for i in 0..3 {
                assert_relative_eq!(a.b_hat[(i, j)], beta[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn fit_errors() {
        let (x, y) = random_problem(10, 1, 2, 1);
        let mut xr = x.clone();
        xr.set_column(1, &x.column(0));
        assert!(matches!(
            fit_nonspatial(&y, &xr, 3.0, &DMatrix::identity(2, 2)),
            Err(Error::RankDeficient { .. })
        ));
        assert!(fit_nonspatial(&y, &x, 0.5, &DMatrix::identity(2, 2)).is_err());
        assert!(sample_nonspatial(
            &fit_nonspatial(&y, &x, 3.0, &DMatrix::identity(2, 2)).unwrap(),
            0,
            &mut rng_from_seed(0)
        )
        .is_err());
    }

    #[test]
    fn draws_reproducible() {
        let (x, y) = random_problem(10, 1, 2, 3);
        let post = fit_nonspatial(&y, &x, 3.0, &DMatrix::identity(2, 2)).unwrap();
        let a = sample_nonspatial(&post, 5, &mut rng_from_seed(4)).unwrap();
        let b = sample_nonspatial(&post, 5, &mut rng_from_seed(4)).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert_eq!(u.b, v.b);
            assert_eq!(u.sigma, v.sigma);
        }
    }
}
