//! Brute-force reference computations used only by tests. Everything here is
//! dense and deliberately avoids the spectral shortcuts of the library.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Column-major `vec`.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn dense_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("oracle matrix must be invertible")
}

/// Posterior of `(vec B, vec G)` in the augmented Gaussian model
/// `vec Y = (I⊗X) vec B + vec G + vec E`, flat prior on `B`,
/// `vec G ~ N(0, MᵀRM ⊗ W)`, `vec E ~ N(0, Mᵀ(I−R)M ⊗ I)`.
/// Returns `(mean, covariance)` of the stacked vector `[vec B; vec G]`.
pub fn augmented_posterior(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    m: &DMatrix<f64>,
    r: &[f64],
    covariance: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let (n, k) = y.shape();
    let q = x.ncols();
    let rd = DMatrix::from_diagonal(&DVector::from_column_slice(r));
    let sd = DMatrix::from_diagonal(&DVector::from_iterator(k, r.iter().map(|v| 1.0 - v)));
    let noise = (m.transpose() * sd * m).kronecker(&DMatrix::identity(n, n));
    let prior_g = (m.transpose() * rd * m).kronecker(covariance);
    let design = {
        let mut d = DMatrix::zeros(n * k, q * k + n * k);
        d.view_mut((0, 0), (n * k, q * k))
            .copy_from(&DMatrix::<f64>::identity(k, k).kronecker(x));
        d.view_mut((0, q * k), (n * k, n * k))
            .copy_from(&DMatrix::identity(n * k, n * k));
        d
    };
    let noise_inv = dense_inverse(&noise);
    let mut precision = design.transpose() * &noise_inv * &design;
    let g_prec = dense_inverse(&prior_g);
    let mut block = precision.view_mut((q * k, q * k), (n * k, n * k)).clone_owned();
    block += g_prec;
    precision.view_mut((q * k, q * k), (n * k, n * k)).copy_from(&block);
    let cov = dense_inverse(&precision);
    let mean = &cov * design.transpose() * noise_inv * vec_of(y);
    (mean, cov)
}

/// Full conditional of `vec G` given `B, M, R` by dense Gaussian conditioning.
pub fn gamma_conditional(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    b: &DMatrix<f64>,
    m: &DMatrix<f64>,
    r: &[f64],
    covariance: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let (n, k) = y.shape();
    let rd = DMatrix::from_diagonal(&DVector::from_column_slice(r));
    let sd = DMatrix::from_diagonal(&DVector::from_iterator(k, r.iter().map(|v| 1.0 - v)));
    let noise = (m.transpose() * sd * m).kronecker(&DMatrix::identity(n, n));
    let prior = (m.transpose() * rd * m).kronecker(covariance);
    // G | rest ~ N(Σ_G Σ_E⁻¹ e, Σ_G − Σ_G (Σ_G + Σ_E)⁻¹ Σ_G) with e = vec(Y − XB)
    let e = vec_of(&(y - x * b));
    let total_inv = dense_inverse(&(&prior + &noise));
    let mean = &prior * &total_inv * e;
    let cov = &prior - &prior * &total_inv * &prior;
    (mean, cov)
}

/// Dense log density of a multivariate normal.
pub fn mvn_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let chol = cov.clone().cholesky().expect("oracle covariance must be PD");
    let diff = x - mean;
    let quad = diff.dot(&chol.solve(&diff));
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
}

/// Log marginal likelihood of `Y` with `B` integrated under a flat prior and
/// `G` integrated under its Gaussian prior, for `Σ = MᵀM` and `R = rI`:
/// `vec Y ~ N((I⊗X) vec B, Σ ⊗ (rW + (1−r)I))`. Constants independent of
/// `Σ` are dropped.
pub fn flat_b_log_marginal(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    r: f64,
    covariance: &DMatrix<f64>,
) -> f64 {
    let (n, k) = y.shape();
    let v = covariance * r + DMatrix::identity(n, n) * (1.0 - r);
    let omega = sigma.kronecker(&v);
    let omega_inv = dense_inverse(&omega);
    let design = DMatrix::<f64>::identity(k, k).kronecker(x);
    let info = design.transpose() * &omega_inv * &design;
    let info_inv = dense_inverse(&info);
    let yv = vec_of(y);
    let proj = &omega_inv - &omega_inv * &design * &info_inv * design.transpose() * &omega_inv;
    let quad = yv.dot(&(&proj * &yv));
    let log_det_omega = omega.clone().cholesky().unwrap().l().diagonal().iter().map(|v| 2.0 * v.ln()).sum::<f64>();
    let log_det_info = info.clone().cholesky().unwrap().l().diagonal().iter().map(|v| 2.0 * v.ln()).sum::<f64>();
    -0.5 * (quad + log_det_omega + log_det_info)
}

/// Log inverse-Wishart density `|Σ|^{-(ν+k+1)/2} exp(−tr(SΣ⁻¹)/2)` without
/// its normalising constant.
pub fn iw_log_kernel(sigma: &DMatrix<f64>, dof: f64, scale: &DMatrix<f64>) -> f64 {
    let k = sigma.nrows() as f64;
    let chol = sigma.clone().cholesky().unwrap();
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let tr = (scale * chol.inverse()).trace();
    -0.5 * (dof + k + 1.0) * log_det - 0.5 * tr
}

/// Kolmogorov distribution survival function `P(K > x)`.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..200 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * x * x).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of values already mapped through a hypothesised CDF
/// (so uniform under the null). Returns the asymptotic p-value with the
/// Stephens small-sample correction.
pub fn ks_uniform_pvalue(u: &[f64]) -> f64 {
    let mut sorted = u.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        let lo = v - i as f64 / n;
        let hi = (i + 1) as f64 / n - v;
        d = d.max(lo).max(hi);
    }
    let sn = n.sqrt();
    kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)
}

/// Two-sample KS test p-value (asymptotic).
pub fn ks_two_sample_pvalue(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sn = ne.sqrt();
    kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)
}

/// Tabulated CDF on a grid from an unnormalised log density, by trapezoid rule.
pub struct GridCdf {
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridCdf {
    pub fn new(lo: f64, hi: f64, points: usize, log_density: impl Fn(f64) -> f64) -> Self {
        let grid: Vec<f64> = (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect();
        let logs: Vec<f64> = grid.iter().map(|&x| log_density(x)).collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let mut cdf = vec![0.0; points];
        for i in 1..points {
            cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * (grid[i] - grid[i - 1]);
        }
        let total = cdf[points - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        GridCdf { grid, cdf }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.grid[0] {
            return 0.0;
        }
        let last = self.grid.len() - 1;
        if x >= self.grid[last] {
            return 1.0;
        }
        let pos = self.grid.partition_point(|&g| g <= x);
        let (x0, x1) = (self.grid[pos - 1], self.grid[pos]);
        let t = (x - x0) / (x1 - x0);
        self.cdf[pos - 1] + t * (self.cdf[pos] - self.cdf[pos - 1])
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let pos = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[pos - 1], self.cdf[pos]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.grid[pos - 1] + t * (self.grid[pos] - self.grid[pos - 1])
    }
}

/// Sample mean and covariance of vectors.
pub fn sample_moments(draws: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = draws[0].len();
    let count = draws.len() as f64;
    let mut mean = DVector::zeros(d);
    for x in draws {
        mean += x;
    }
    mean /= count;
    let mut cov = DMatrix::zeros(d, d);
    for x in draws {
        let c = x - &mean;
        cov += &c * c.transpose();
    }
    cov /= count - 1.0;
    (mean, cov)
}
