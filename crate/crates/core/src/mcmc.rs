//! Metropolis-within-Gibbs sampler for the full spatial model.
//!
//! State `{B, G, M, R}` with `M` upper triangular, positive diagonal and
//! `Σ_S = MᵀM`. Each sweep runs, in order: an exact joint draw of `(B, G)`
//! given `(M, R)` (first `B` with `G` integrated out, then `G` given `B`),
//! a random-walk Metropolis move on `M` (log scale on the diagonal) and a
//! logit random-walk move on `R`. Drawing `B` marginally avoids the slow
//! mixing of the intercept against the near-constant component of `G`.
//!
//! Priors: flat on `B`; `vec(G) ~ N(0, MᵀRM ⊗ W_φ)`; `MᵀM ~ IW(v, vΣ0)`
//! pushed forward to the entries of `M`; PC prior on `R`.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{cholesky, upper_triangular_inverse};
use crate::rng::{child_seed, rng_from_seed};
use crate::spatial::{design_gram_inverse, spectral_decompose, ScaledPrecision, SpectralBasis};

/// Floor applied to `r` and `1 − r` inside logarithms and divisions.
const PROPORTION_FLOOR: f64 = 1e-12;

/// Maximum rejection-sampler attempts for the PC prior.
pub const PC_MAX_ATTEMPTS: u64 = 10_000_000;

fn check_eigenvalues(lambdas: &DVector<f64>) -> Result<()> {
    if let Some(bad) = lambdas.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "precision eigenvalue {bad} is not positive"
        )));
    }
    Ok(())
}

/// `2·KLD(R)` of `N(0, (I − R) ⊗ I + R ⊗ W_φ)` from `N(0, I)`, given the
/// eigenvalues `λ` of `W_φ⁻¹`.
pub fn pc_kld(r: &[f64], lambdas: &DVector<f64>) -> Result<f64> {
    check_eigenvalues(lambdas)?;
    let inv_sum: f64 = lambdas.iter().map(|l| 1.0 / l).sum();
    Ok(pc_kld_unchecked(r, lambdas, inv_sum))
}

fn pc_kld_unchecked(r: &[f64], lambdas: &DVector<f64>, inv_sum: f64) -> f64 {
    let n = lambdas.len() as f64;
    let r_sum: f64 = r.iter().sum();
    let mut value = -n * r_sum + r_sum * inv_sum;
    for &ri in r {
        for &l in lambdas.iter() {
            value -= (1.0 - ri + ri / l).ln();
        }
    }
    if value < 0.0 && value >= -1e-10 {
        0.0
    } else {
        value
    }
}

/// PC prior log density up to a constant: `−λ_R sqrt(2·KLD(R))`.
pub fn pc_log_density(r: &[f64], lambda_r: f64, lambdas: &DVector<f64>) -> Result<f64> {
    Ok(-lambda_r * pc_kld(r, lambdas)?.max(0.0).sqrt())
}

/// Rejection sampler for the PC prior with uniform proposals.
pub fn pc_rejection_sample<R: Rng + ?Sized>(
    lambda_r: f64,
    lambdas: &DVector<f64>,
    k: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(lambda_r > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda_R = {lambda_r} must be positive")));
    }
    check_eigenvalues(lambdas)?;
    let inv_sum: f64 = lambdas.iter().map(|l| 1.0 / l).sum();
    let mut proposal = vec![0.0; k];
    for _ in 0..PC_MAX_ATTEMPTS {
        for v in proposal.iter_mut() {
            *v = rng.random::<f64>();
        }
        let log_accept = -lambda_r * pc_kld_unchecked(&proposal, lambdas, inv_sum).max(0.0).sqrt();
        if rng.random::<f64>().ln() <= log_accept {
            return Ok(proposal);
        }
    }
    Err(Error::RejectionExhausted {
        attempts: PC_MAX_ATTEMPTS,
    })
}

/// Tunable sampler settings shared by every chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    /// Inverse-Wishart degrees of freedom.
    pub v: f64,
    pub lambda_r: f64,
    /// Proposal sd for `log M_ii`.
    pub s1: f64,
    /// Proposal sd for off-diagonal `M_ij`.
    pub s2: f64,
    /// Proposal sd for `logit r_j`.
    pub s3: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    /// Keep `G` in the recorded draws.
    pub store_g: bool,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings {
            v: 2.0,
            lambda_r: 0.01,
            s1: 0.10,
            s2: 0.15,
            s3: 0.25,
            iterations: 40_000,
            burn_in: 20_000,
            thin: 5,
            chains: 4,
            store_g: false,
        }
    }
}

impl SamplerSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.lambda_r > 0.0) {
            return bad(format!("lambda_r = {} must be positive", self.lambda_r));
        }
        for (name, s) in [("s1", self.s1), ("s2", self.s2), ("s3", self.s3)] {
            if !(s > 0.0) {
                return bad(format!("{name} = {s} must be positive"));
            }
        }
        if self.thin == 0 {
            return bad("thin must be at least 1".into());
        }
        if self.burn_in >= self.iterations {
            return bad(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            ));
        }
        if self.chains == 0 {
            return bad("chain count must be at least 1".into());
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Which blocks are updated each sweep. Frozen blocks keep their initial value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Updates {
    pub beta: bool,
    pub gamma: bool,
    pub m: bool,
    pub r: bool,
}

impl Default for Updates {
    fn default() -> Self {
        Updates {
            beta: true,
            gamma: true,
            m: true,
            r: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpatialConfig {
    pub settings: SamplerSettings,
    pub sigma0: DMatrix<f64>,
    pub updates: Updates,
    pub seed: u64,
}

impl SpatialConfig {
    pub fn new(settings: SamplerSettings, sigma0: DMatrix<f64>, seed: u64) -> Self {
        SpatialConfig {
            settings,
            sigma0,
            updates: Updates::default(),
            seed,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        self.settings.validate()?;
        if self.sigma0.shape() != (k, k) {
            return Err(Error::Dimension(format!("Sigma0 must be {k}x{k}")));
        }
        cholesky(&self.sigma0)?;
        if self.settings.v <= k as f64 - 1.0 {
            return Err(Error::InvalidParameter(format!(
                "v = {} must exceed k - 1 = {}",
                self.settings.v,
                k - 1
            )));
        }
        Ok(())
    }
}

/// Data and spatial structure shared read-only by every chain.
#[derive(Debug, Clone)]
pub struct SpatialProblem {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub spectral: SpectralBasis,
    /// `(XᵀX)⁻¹Xᵀ`.
    projector: DMatrix<f64>,
    /// `QᵀX` in the eigenbasis of `W_φ⁻¹`.
    qt_x: DMatrix<f64>,
    /// `L_x⁻ᵀ` with `XᵀX = L_x L_xᵀ`.
    lx_inv_t: DMatrix<f64>,
    inv_lambda_sum: f64,
}

impl SpatialProblem {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>, precision: &ScaledPrecision) -> Result<Self> {
        let spectral = spectral_decompose(precision)?;
        Self::with_spectral(y, x, spectral)
    }

    pub fn with_spectral(y: DMatrix<f64>, x: DMatrix<f64>, spectral: SpectralBasis) -> Result<Self> {
        let n = y.nrows();
        if x.nrows() != n || spectral.q.nrows() != n {
            return Err(Error::Dimension(format!(
                "Y has {n} rows, X has {}, spatial structure has {}",
                x.nrows(),
                spectral.q.nrows()
            )));
        }
        let xtx_inv = design_gram_inverse(&x)?;
        let projector = &xtx_inv * x.transpose();
        let lx = cholesky(&(x.transpose() * &x))?.l();
        let lx_inv_t = upper_triangular_inverse(&lx.transpose())?;
        let inv_lambda_sum = spectral.lambda.iter().map(|l| 1.0 / l).sum();
        let qt_x = spectral.q.transpose() * &x;
        Ok(SpatialProblem {
            y,
            x,
            spectral,
            projector,
            qt_x,
            lx_inv_t,
            inv_lambda_sum,
        })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn k(&self) -> usize {
        self.y.ncols()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    pub fn ols(&self) -> DMatrix<f64> {
        &self.projector * &self.y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub b: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub r: DVector<f64>,
}

impl ChainState {
    /// `B` at the OLS fit, `G = 0`, `M` the upper Cholesky factor of `Σ0`,
    /// and each `r_j ~ U(0.25, 0.75)`.
    pub fn initial<R: Rng + ?Sized>(problem: &SpatialProblem, sigma0: &DMatrix<f64>, rng: &mut R) -> Result<Self> {
        let m = cholesky(sigma0)?.l().transpose();
        let r = DVector::from_fn(problem.k(), |_, _| 0.25 + 0.5 * rng.random::<f64>());
        Ok(ChainState {
            b: problem.ols(),
            g: DMatrix::zeros(problem.n(), problem.k()),
            m,
            r,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.m.nrows();
        for i in 0..k {
            if !(self.m[(i, i)] > 0.0) {
                return Err(Error::InvalidParameter(format!("M[{i},{i}] must be positive")));
            }
            for j in 0..i {
                if self.m[(i, j)] != 0.0 {
                    return Err(Error::InvalidParameter("M must be upper triangular".into()));
                }
            }
        }
        if let Some(bad) = self.r.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::InvalidParameter(format!("r = {bad} outside (0, 1)")));
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!(
            "B = {:?}, M = {:?}, R = {:?}",
            self.b.as_slice(),
            self.m.as_slice(),
            self.r.as_slice()
        )
    }
}

fn floored(v: f64) -> f64 {
    v.max(PROPORTION_FLOOR)
}

/// Exact draw of `B | Y, G, M, R`:
/// `N(vec((XᵀX)⁻¹Xᵀ(Y − G)), Mᵀ(I − R)M ⊗ (XᵀX)⁻¹)`.
pub fn gibbs_update_beta<R: Rng + ?Sized>(state: &ChainState, problem: &SpatialProblem, rng: &mut R) -> DMatrix<f64> {
    let (q, k) = (problem.q(), problem.k());
    let mean = &problem.projector * (&problem.y - &state.g);
    let mut z = DMatrix::from_fn(q, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    for j in 0..k {
        let s = (1.0 - state.r[j]).max(0.0).sqrt();
        z.column_mut(j).scale_mut(s);
    }
    mean + &problem.lx_inv_t * z * &state.m
}

/// Exact draw of `B | Y, M, R` with `G` integrated out. With `B = B̃M`
/// and `Ỹ = YM⁻¹`, column `j` of `B̃` is a GLS posterior under covariance
/// `r_j W_φ + (1 − r_j)I`, diagonal in the eigenbasis of `W_φ⁻¹`.
pub fn gibbs_update_beta_collapsed<R: Rng + ?Sized>(
    state: &ChainState,
    problem: &SpatialProblem,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (n, q, k) = (problem.n(), problem.q(), problem.k());
    let m_inv = upper_triangular_inverse(&state.m)?;
    let spec = &problem.spectral;
    let y_coords = spec.q.transpose() * (&problem.y * &m_inv);
    let mut b_white = DMatrix::zeros(q, k);
    for j in 0..k {
        let r = state.r[j];
        let weights = DVector::from_fn(n, |i, _| 1.0 / (r / spec.lambda[i] + 1.0 - r));
        let weighted = DMatrix::from_fn(n, q, |i, a| problem.qt_x[(i, a)] * weights[i]);
        let info = weighted.transpose() * &problem.qt_x;
        let chol = cholesky(&info)?;
        let mean = chol.solve(&(weighted.transpose() * y_coords.column(j)));
        let z = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Singular("GLS information matrix".into()))?;
        b_white.set_column(j, &(mean + noise));
    }
    Ok(b_white * &state.m)
}

/// Exact draw of `G | Y, B, M, R`, computed per outcome in the eigenbasis of
/// `W_φ⁻¹`. With `e = (Y − XB)M⁻¹` and `G = ΘM`, the coordinates
/// `Qᵀθ_j` are independent with mean weight `r/(r + (1 − r)λ_i)` and
/// variance `r(1 − r)/(r + (1 − r)λ_i)`.
pub fn gibbs_update_gamma<R: Rng + ?Sized>(state: &ChainState, problem: &SpatialProblem, rng: &mut R) -> Result<DMatrix<f64>> {
    Ok(gamma_draw(state, problem, rng)?.0)
}

/// Returns `(G, W_φ^{-1/2} G)`.
fn gamma_draw<R: Rng + ?Sized>(
    state: &ChainState,
    problem: &SpatialProblem,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, k) = (problem.n(), problem.k());
    if let Some(bad) = state.r.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::InvalidParameter(format!(
            "gamma update needs r strictly inside (0, 1), got {bad}"
        )));
    }
    let m_inv = upper_triangular_inverse(&state.m)?;
    let spec = &problem.spectral;
    let e = (&problem.y - &problem.x * &state.b) * &m_inv;
    let mut coords = spec.q.transpose() * e;
    for j in 0..k {
        let r = state.r[j];
        for i in 0..n {
            let denom = r + (1.0 - r) * spec.lambda[i];
            let z: f64 = rng.sample(StandardNormal);
            coords[(i, j)] = r / denom * coords[(i, j)] + (r * (1.0 - r) / denom).sqrt() * z;
        }
    }
    let g = &spec.q * &coords * &state.m;
    for i in 0..n {
        let s = spec.lambda[i].sqrt();
        coords.row_mut(i).scale_mut(s);
    }
    let white_g = &spec.q * coords * &state.m;
    Ok((g, white_g))
}

/// `log p(Y | B, G, M, R) + log p(G | M, R)` up to a constant, from the
/// residual `Y − XB − G` and `W_φ^{-1/2}G`.
fn loglik_gamma_prior(resid: &DMatrix<f64>, white_g: &DMatrix<f64>, m: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let n = resid.nrows() as f64;
    let m_inv = match upper_triangular_inverse(m) {
        Ok(inv) => inv,
        Err(_) => return f64::NEG_INFINITY,
    };
    let delta = resid * &m_inv;
    let theta = white_g * &m_inv;
    let mut total = 0.0;
    for j in 0..r.len() {
        let rj = floored(r[j]);
        let sj = floored(1.0 - r[j]);
        let ssq_delta = delta.column(j).norm_squared();
        let ssq_theta = theta.column(j).norm_squared();
        total -= 0.5 * (ssq_delta / sj + ssq_theta / rj);
        total -= 0.5 * n * (rj * sj).ln() + 2.0 * n * m[(j, j)].ln();
    }
    total
}

/// Log prior of the entries of `M`: the `IW(v, vΣ0)` density of `MᵀM`
/// times the Jacobian `2^k Π M_ii^{k−i+1}`, up to a constant.
pub fn log_m_prior(m: &DMatrix<f64>, v: f64, sigma0: &DMatrix<f64>) -> f64 {
    let k = m.nrows();
    let m_inv = match upper_triangular_inverse(m) {
        Ok(inv) => inv,
        Err(_) => return f64::NEG_INFINITY,
    };
    let quad = m_inv.transpose() * sigma0 * &m_inv;
    let mut total = 0.0;
    for i in 0..k {
        let d = m[(i, i)];
        if !(d > 0.0) {
            return f64::NEG_INFINITY;
        }
        total -= (v + (i + 1) as f64) * d.ln() + 0.5 * v * quad[(i, i)];
    }
    total
}

/// Unnormalised log posterior split into
/// `(log-likelihood + G prior, log M prior, log R prior)`.
pub fn log_target_components(
    state: &ChainState,
    problem: &SpatialProblem,
    settings: &SamplerSettings,
    sigma0: &DMatrix<f64>,
) -> Result<(f64, f64, f64)> {
    let resid = &problem.y - &problem.x * &state.b - &state.g;
    let white_g = &problem.spectral.sqrt_precision * &state.g;
    let lik = loglik_gamma_prior(&resid, &white_g, &state.m, &state.r);
    let m_prior = log_m_prior(&state.m, settings.v, sigma0);
    let r_prior = pc_log_density(state.r.as_slice(), settings.lambda_r, &problem.spectral.lambda)?;
    Ok((lik, m_prior, r_prior))
}

/// Quantities fixed while `M` and `R` move.
struct Cache {
    resid: DMatrix<f64>,
    white_g: DMatrix<f64>,
}

impl Cache {
    fn new(state: &ChainState, problem: &SpatialProblem) -> Self {
        Cache {
            resid: &problem.y - &problem.x * &state.b - &state.g,
            white_g: &problem.spectral.sqrt_precision * &state.g,
        }
    }
}

fn pc_log(problem: &SpatialProblem, r: &DVector<f64>, lambda_r: f64) -> f64 {
    -lambda_r * pc_kld_unchecked(r.as_slice(), &problem.spectral.lambda, problem.inv_lambda_sum)
        .max(0.0)
        .sqrt()
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio.is_finite() && rng.random::<f64>().ln() <= log_ratio
}

fn propose_m<R: Rng + ?Sized>(m: &DMatrix<f64>, s1: f64, s2: f64, rng: &mut R) -> (DMatrix<f64>, f64) {
    let k = m.nrows();
    let mut proposal = m.clone();
    let mut log_jacobian = 0.0;
    for j in 0..k {
        for i in 0..=j {
            let z: f64 = rng.sample(StandardNormal);
            if i == j {
                let step = s1 * z;
                proposal[(i, i)] = m[(i, i)] * step.exp();
                log_jacobian += step;
            } else {
                proposal[(i, j)] = m[(i, j)] + s2 * z;
            }
        }
    }
    (proposal, log_jacobian)
}

/// Random-walk Metropolis move on `M` given `B`, `G`, `R`.
/// Returns the new `M` and whether the proposal was accepted.
pub fn mh_update_m<R: Rng + ?Sized>(
    state: &ChainState,
    problem: &SpatialProblem,
    settings: &SamplerSettings,
    sigma0: &DMatrix<f64>,
    rng: &mut R,
) -> (DMatrix<f64>, bool) {
    let cache = Cache::new(state, problem);
    m_step(state, &cache, settings, sigma0, rng)
}

fn m_step<R: Rng + ?Sized>(
    state: &ChainState,
    cache: &Cache,
    settings: &SamplerSettings,
    sigma0: &DMatrix<f64>,
    rng: &mut R,
) -> (DMatrix<f64>, bool) {
    let (proposal, log_jacobian) = propose_m(&state.m, settings.s1, settings.s2, rng);
    let target = |m: &DMatrix<f64>| {
        loglik_gamma_prior(&cache.resid, &cache.white_g, m, &state.r) + log_m_prior(m, settings.v, sigma0)
    };
    let log_ratio = target(&proposal) - target(&state.m) + log_jacobian;
    if accept(log_ratio, rng) {
        (proposal, true)
    } else {
        (state.m.clone(), false)
    }
}

/// Logit random-walk Metropolis move on `R` given `B`, `G`, `M`.
pub fn mh_update_r<R: Rng + ?Sized>(
    state: &ChainState,
    problem: &SpatialProblem,
    settings: &SamplerSettings,
    rng: &mut R,
) -> (DVector<f64>, bool) {
    let cache = Cache::new(state, problem);
    r_step(state, problem, &cache, settings, rng)
}

fn r_step<R: Rng + ?Sized>(
    state: &ChainState,
    problem: &SpatialProblem,
    cache: &Cache,
    settings: &SamplerSettings,
    rng: &mut R,
) -> (DVector<f64>, bool) {
    let mut proposal = state.r.clone();
    let mut log_jacobian = 0.0;
    for j in 0..proposal.len() {
        let r = state.r[j];
        let logit = (r / (1.0 - r)).ln() + settings.s3 * rng.sample::<f64, _>(StandardNormal);
        let r_new = 1.0 / (1.0 + (-logit).exp());
        proposal[j] = r_new;
        log_jacobian += (floored(r_new) * floored(1.0 - r_new)).ln() - (floored(r) * floored(1.0 - r)).ln();
    }
    let interior = proposal.iter().all(|&v| v > 0.0 && v < 1.0);
    if !interior {
        return (state.r.clone(), false);
    }
    let target = |r: &DVector<f64>| {
        loglik_gamma_prior(&cache.resid, &cache.white_g, &state.m, r) + pc_log(problem, r, settings.lambda_r)
    };
    let log_ratio = target(&proposal) - target(&state.r) + log_jacobian;
    if accept(log_ratio, rng) {
        (proposal, true)
    } else {
        (state.r.clone(), false)
    }
}

/// One recorded state.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub b: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub r: DVector<f64>,
    pub g: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<Draw>,
    pub acceptance_m: f64,
    pub acceptance_r: f64,
    pub seed: u64,
    pub wall_time_secs: f64,
}

impl ChainOutput {
    /// Values of one scalar parameter across the draws.
    pub fn trace(&self, f: impl Fn(&Draw) -> f64) -> Vec<f64> {
        self.draws.iter().map(f).collect()
    }
}

/// Runs one chain from `init`, recording every `thin`-th state after burn-in.
pub fn run_chain<R: Rng + ?Sized>(
    problem: &SpatialProblem,
    config: &SpatialConfig,
    init: ChainState,
    seed: u64,
    rng: &mut R,
) -> Result<ChainOutput> {
    config.validate(problem.k())?;
    init.validate()?;
    let settings = &config.settings;
    let updates = config.updates;
    let start = Instant::now();
    let mut state = init;
    let mut cache = Cache::new(&state, problem);
    let mut draws = Vec::with_capacity(settings.draws_per_chain());
    let (mut accepted_m, mut accepted_r) = (0usize, 0usize);
    let current_target = |state: &ChainState, cache: &Cache| {
        loglik_gamma_prior(&cache.resid, &cache.white_g, &state.m, &state.r)
            + log_m_prior(&state.m, settings.v, &config.sigma0)
            + pc_log(problem, &state.r, settings.lambda_r)
    };
    for iter in 0..settings.iterations {
        if updates.beta && updates.gamma {
            state.b = gibbs_update_beta_collapsed(&state, problem, rng)?;
        } else if updates.beta {
            state.b = gibbs_update_beta(&state, problem, rng);
        }
        if updates.gamma {
            let (g, white_g) = gamma_draw(&state, problem, rng)?;
            state.g = g;
            cache.white_g = white_g;
        }
        if updates.beta || updates.gamma {
            cache.resid = &problem.y - &problem.x * &state.b - &state.g;
        }
        if updates.m {
            let (m, ok) = m_step(&state, &cache, settings, &config.sigma0, rng);
            state.m = m;
            accepted_m += ok as usize;
        }
        if updates.r {
            let (r, ok) = r_step(&state, problem, &cache, settings, rng);
            state.r = r;
            accepted_r += ok as usize;
        }
        if !current_target(&state, &cache).is_finite() {
            return Err(Error::NonFinite {
                iteration: iter,
                state: state.describe(),
            });
        }
        if iter >= settings.burn_in && (iter - settings.burn_in + 1) % settings.thin == 0 {
            draws.push(Draw {
                b: state.b.clone(),
                m: state.m.clone(),
                r: state.r.clone(),
                g: settings.store_g.then(|| state.g.clone()),
            });
        }
    }
    let iters = settings.iterations.max(1) as f64;
    Ok(ChainOutput {
        draws,
        acceptance_m: accepted_m as f64 / iters,
        acceptance_r: accepted_r as f64 / iters,
        seed,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs `settings.chains` independent chains with seeds derived from
/// `config.seed`, each with its own overdispersed initial state.
pub fn run_chains(problem: &SpatialProblem, config: &SpatialConfig, exec: Execution) -> Result<Vec<ChainOutput>> {
    config.validate(problem.k())?;
    let outputs = exec.map_indices(config.settings.chains, |c| {
        let seed = child_seed(config.seed, c as u64);
        let mut rng = rng_from_seed(seed);
        let init = ChainState::initial(problem, &config.sigma0, &mut rng)?;
        run_chain(problem, config, init, seed, &mut rng)
    });
    outputs.into_iter().collect()
}

/// Writes draws as CSV: one row per draw with `chain`, `draw`, then
/// `b_i_j`, the upper-triangular `m_i_j`, `r_j` and optionally `g_i_j`
/// (row index first, 0-based).
pub fn write_chains_csv<W: Write>(out: W, chains: &[ChainOutput]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let Some(first) = chains.iter().find_map(|c| c.draws.first()) else {
        writer.flush()?;
        return Ok(());
    };
    let (q, k) = first.b.shape();
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    for j in 0..k {
        for i in 0..q {
            header.push(format!("b_{i}_{j}"));
        }
    }
    for j in 0..k {
        for i in 0..=j {
            header.push(format!("m_{i}_{j}"));
        }
    }
    for j in 0..k {
        header.push(format!("r_{j}"));
    }
    let n_g = first.g.as_ref().map(|g| g.nrows());
    if let Some(n) = n_g {
        for j in 0..k {
            for i in 0..n {
                header.push(format!("g_{i}_{j}"));
            }
        }
    }
    writer.write_record(&header)?;
    for (c, chain) in chains.iter().enumerate() {
        for (d, draw) in chain.draws.iter().enumerate() {
            let mut row = vec![c.to_string(), d.to_string()];
            row.extend(draw.b.iter().map(|v| format!("{v:.6e}")));
            for j in 0..k {
                for i in 0..=j {
                    row.push(format!("{:.6e}", draw.m[(i, j)]));
                }
            }
            row.extend(draw.r.iter().map(|v| format!("{v:.6e}")));
            if let Some(g) = &draw.g {
                row.extend(g.iter().map(|v| format!("{v:.6e}")));
            }
            writer.write_record(&row)?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::design_with_intercept;
    use crate::spatial::{AdjacencyGraph, PrecisionKind};

    fn small_problem(seed: u64) -> SpatialProblem {
        let mut rng = rng_from_seed(seed);
        let n = 6;
        let graph = AdjacencyGraph::path(n).unwrap();
        let prec = ScaledPrecision::build(&graph, PrecisionKind::Car, 0.9).unwrap();
        let x1 = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        SpatialProblem::new(y, design_with_intercept(&x1), &prec).unwrap()
    }

    #[test]
    fn pc_kld_trivial_cases() {
        let lambdas = DVector::from_vec(vec![0.5, 1.0, 2.0]);
        assert_eq!(pc_kld(&[0.0, 0.0], &lambdas).unwrap(), 0.0);
        let ones = DVector::from_element(4, 1.0);
        assert!(pc_kld(&[0.3, 0.9], &ones).unwrap().abs() < 1e-12);
        assert!(pc_kld(&[0.3], &DVector::from_vec(vec![1.0, 0.0])).is_err());
        let base = pc_log_density(&[0.4], 1.0, &lambdas).unwrap();
        let doubled = pc_log_density(&[0.4], 2.0, &lambdas).unwrap();
        assert!((doubled - 2.0 * base).abs() < 1e-14);
        assert_eq!(pc_log_density(&[0.0], 3.0, &lambdas).unwrap(), 0.0);
    }

    #[test]
    fn pc_density_matches_reordered_accumulation() {
        let mut rng = rng_from_seed(3);
        let lambdas = DVector::from_fn(9, |_, _| 0.1 + 3.0 * rng.random::<f64>());
        for _ in 0..20 {
            let r: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            // per-outcome KL, summed in the opposite order
            let mut alt = 0.0;
            for &ri in r.iter().rev() {
                let mut per = 0.0;
                for &l in lambdas.iter().rev() {
                    per += (1.0 - ri) + ri / l - 1.0 - (1.0 - ri + ri / l).ln();
                }
                alt += per;
            }
            let expected = -0.7 * alt.sqrt();
            let got = pc_log_density(&r, 0.7, &lambdas).unwrap();
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn rejection_sampler_errors() {
        let lambdas = DVector::from_vec(vec![1.0, 2.0]);
        assert!(pc_rejection_sample(0.0, &lambdas, 2, &mut rng_from_seed(0)).is_err());
        let r = pc_rejection_sample(0.01, &lambdas, 2, &mut rng_from_seed(0)).unwrap();
        assert!(r.iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn settings_validation() {
        let mut s = SamplerSettings::default();
        assert!(s.validate().is_ok());
        assert_eq!(s.draws_per_chain(), 4_000);
        s.thin = 0;
        assert!(s.validate().is_err());
        let s = SamplerSettings {
            s2: 0.0,
            ..SamplerSettings::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn beta_mean_at_g_equal_y() {
        let p = small_problem(1);
        let state = ChainState {
            b: DMatrix::zeros(2, 2),
            g: p.y.clone(),
            m: DMatrix::identity(2, 2),
            r: DVector::from_vec(vec![1.0 - 1e-15, 1.0 - 1e-15]),
        };
        let b = gibbs_update_beta(&state, &p, &mut rng_from_seed(2));
        assert!(b.amax() < 1e-6);
    }

    #[test]
    fn gamma_rejects_boundary() {
        let p = small_problem(2);
        let state = ChainState {
            b: DMatrix::zeros(2, 2),
            g: DMatrix::zeros(6, 2),
            m: DMatrix::identity(2, 2),
            r: DVector::from_vec(vec![0.0, 0.5]),
        };
        assert!(gibbs_update_gamma(&state, &p, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn loglik_reduces_to_log_determinants() {
        let p = small_problem(4);
        let b = p.ols();
        let y = &p.x * &b;
        let p = SpatialProblem::with_spectral(y, p.x.clone(), p.spectral.clone()).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.5, 0.3, 0.0, 0.7]);
        let r = DVector::from_vec(vec![0.2, 0.6]);
        let state = ChainState {
            b,
            g: DMatrix::zeros(6, 2),
            m: m.clone(),
            r: r.clone(),
        };
        let settings = SamplerSettings::default();
        let (lik, _, _) = log_target_components(&state, &p, &settings, &DMatrix::identity(2, 2)).unwrap();
        let expected = -3.0 * ((0.2f64 * 0.8).ln() + (0.6f64 * 0.4).ln()) - 12.0 * (1.5f64.ln() + 0.7f64.ln());
        assert!((lik - expected).abs() < 1e-10);
    }

    #[test]
    fn loglik_scalar_case() {
        // M = I, R = 0.5: −Σ(Δ² + θ²) − (n/2)·k·log(1/4)
        let p = small_problem(5);
        let mut rng = rng_from_seed(6);
        let g = DMatrix::from_fn(6, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let state = ChainState {
            b: DMatrix::zeros(2, 2),
            g: g.clone(),
            m: DMatrix::identity(2, 2),
            r: DVector::from_element(2, 0.5),
        };
        let (lik, _, _) =
            log_target_components(&state, &p, &SamplerSettings::default(), &DMatrix::identity(2, 2)).unwrap();
        let delta = &p.y - &g;
        let theta = &p.spectral.sqrt_precision * &g;
        let expected = -delta.norm_squared() - theta.norm_squared() - 6.0 * 0.25f64.ln();
        assert!((lik - expected).abs() < 1e-10);
    }

    #[test]
    fn tiny_proposals_always_accept() {
        let p = small_problem(7);
        let mut rng = rng_from_seed(8);
        let state = ChainState::initial(&p, &DMatrix::identity(2, 2), &mut rng).unwrap();
        let settings = SamplerSettings {
            s1: 1e-12,
            s2: 1e-12,
            s3: 1e-12,
            ..SamplerSettings::default()
        };
        for _ in 0..50 {
            let (m, ok) = mh_update_m(&state, &p, &settings, &DMatrix::identity(2, 2), &mut rng);
            assert!(ok);
            assert!((m - &state.m).amax() < 1e-9);
            let (r, ok) = mh_update_r(&state, &p, &settings, &mut rng);
            assert!(ok);
            assert!((r - &state.r).amax() < 1e-9);
        }
    }

    #[test]
    fn chains_reproducible_and_sized() {
        let p = small_problem(9);
        let settings = SamplerSettings {
            iterations: 300,
            burn_in: 100,
            thin: 4,
            chains: 2,
            store_g: true,
            ..SamplerSettings::default()
        };
        let config = SpatialConfig::new(settings, DMatrix::identity(2, 2), 11);
        let a = run_chains(&p, &config, Execution::Sequential).unwrap();
        let b = run_chains(&p, &config, Execution::Parallel).unwrap();
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.draws.len(), 50);
            assert_eq!(x.draws, y.draws);
            assert_eq!(x.seed, y.seed);
            assert!((0.0..=1.0).contains(&x.acceptance_m));
            assert!(x.draws.iter().all(|d| d.r.iter().all(|&v| v > 0.0 && v < 1.0)));
            assert!(x.draws.iter().all(|d| (0..2).all(|i| d.m[(i, i)] > 0.0) && d.m[(1, 0)] == 0.0));
        }
        assert_ne!(a[0].seed, a[1].seed);
        let mut buf = Vec::new();
        write_chains_csv(&mut buf, &a).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("chain,draw,b_0_0,b_1_0"));
        assert_eq!(header.split(',').count(), 2 + 4 + 3 + 2 + 12);
        assert_eq!(text.lines().count(), 101);
    }

    #[test]
    fn m_prior_jacobian_matches_finite_differences() {
        // Jacobian of the map from the upper-triangular entries of M to the
        // upper-triangular entries of MᵀM, compared with 2^k Π M_ii^{k−i+1}.
        let m = DMatrix::from_row_slice(3, 3, &[1.3, 0.4, -0.2, 0.0, 0.8, 0.5, 0.0, 0.0, 1.7]);
        let k = 3;
        let idx: Vec<(usize, usize)> = (0..k).flat_map(|j| (0..=j).map(move |i| (i, j))).collect();
        let f = |m: &DMatrix<f64>| {
            let s = m.transpose() * m;
            idx.iter().map(|&(i, j)| s[(i, j)]).collect::<Vec<_>>()
        };
        let h = 1e-6;
        let dim = idx.len();
        let mut jac = DMatrix::zeros(dim, dim);
        for (c, &(i, j)) in idx.iter().enumerate() {
            let mut plus = m.clone();
            let mut minus = m.clone();
            plus[(i, j)] += h;
            minus[(i, j)] -= h;
            let (fp, fm) = (f(&plus), f(&minus));
            for r in 0..dim {
                jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        let numeric = jac.determinant().abs();
        let analytic = 8.0 * 1.3f64.powi(3) * 0.8f64.powi(2) * 1.7;
        assert!((numeric / analytic - 1.0).abs() < 1e-6);
    }
}
