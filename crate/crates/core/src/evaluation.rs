//! Posterior summaries, MCMC diagnostics, frequentist evaluation over
//! replicated datasets, Gaussian KL model fit, spatial autocorrelation tests
//! and DIC.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::GaussianSpec;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_det_spd, spd_inverse};
use crate::mcmc::{ChainOutput, Draw};
use crate::nonspatial::NonSpatialDraw;
use crate::spatial::{AdjacencyGraph, SpectralBasis};
use crate::stats::normal_quantile;

/// Minimum draw count accepted by [`hpd_interval`].
pub const HPD_MIN_DRAWS: usize = 100;

/// Replicate count below which a report is flagged as under-powered.
pub const RECOMMENDED_REPLICATES: usize = 30;

/// Minimum permutation count for the autocorrelation tests.
pub const MIN_PERMUTATIONS: usize = 999;

/// Shortest interval spanning `⌈level·count⌉` consecutive order statistics.
/// Ties between equally short windows go to the lowest one.
pub fn hpd_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if samples.len() < HPD_MIN_DRAWS {
        return Err(Error::InsufficientData(format!(
            "HPD interval needs at least {HPD_MIN_DRAWS} draws, got {}",
            samples.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level {level} outside (0, 1)")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite draw in HPD input".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let count = sorted.len();
    let span = ((level * count as f64).ceil() as usize).clamp(1, count);
    let mut best = 0;
    let mut best_width = f64::INFINITY;
    for start in 0..=(count - span) {
        let width = sorted[start + span - 1] - sorted[start];
        if width < best_width {
            best_width = width;
            best = start;
        }
    }
    Ok((sorted[best], sorted[best + span - 1]))
}

/// Convergence diagnostics for one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Rank-normalised split R-hat (maximum of bulk and folded versions);
    /// NaN when every draw is identical.
    pub rhat: f64,
    /// Bulk effective sample size; NaN when every draw is identical.
    pub ess: f64,
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Splits every chain in half (dropping the middle draw of odd lengths).
fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Rank-normalises the pooled draws: `Φ⁻¹((rank − 3/8)/(S + 1/4))`.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let total = pooled.len() as f64;
    let ranks = average_ranks(&pooled);
    let mut out = Vec::with_capacity(chains.len());
    let mut offset = 0;
    for c in chains {
        out.push(
            (0..c.len())
                .map(|i| normal_quantile((ranks[offset + i] - 0.375) / (total + 0.25)))
                .collect(),
        );
        offset += c.len();
    }
    out
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Classic R-hat of already-split chains.
fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(c)).collect();
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let b = n * mean_var(&means).1;
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Autocovariance of one chain at `lag` (biased, divided by length).
fn autocovariance(c: &[f64], mean: f64, lag: usize) -> f64 {
    let n = c.len();
    let mut acc = 0.0;
    for t in 0..n - lag {
        acc += (c[t] - mean) * (c[t + lag] - mean);
    }
    acc / n as f64
}

/// Multi-chain ESS with Geyer's initial monotone sequence estimator.
fn basic_ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(c)).collect();
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    let b = nf * mean_var(&means).1;
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    let rho = |lag: usize| {
        let acov: f64 = chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocovariance(c, mu, lag))
            .sum::<f64>()
            / m;
        1.0 - (w - acov) / var_plus
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if t == 0 {
            // ρ_0 is taken as exactly one
            pair = 1.0 + rho(1);
        }
        if pair < 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        prev_pair = pair;
        tau += 2.0 * pair;
        t += 2;
    }
    let tau = tau.max(1.0 / (m * nf).log10().max(1.0));
    m * nf / tau
}

/// Rank-normalised split R-hat and bulk ESS.
pub fn rhat_ess(chains: &[Vec<f64>]) -> Result<Diagnostics> {
    if chains.is_empty() {
        return Err(Error::InsufficientData("no chains supplied".into()));
    }
    let len = chains[0].len();
    if chains.iter().any(|c| c.len() != len) {
        return Err(Error::Dimension("chains must have equal length".into()));
    }
    if len < 4 {
        return Err(Error::InsufficientData("chains need at least 4 draws".into()));
    }
    if chains.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite draw in diagnostics input".into()));
    }
    let first = chains[0][0];
    if chains.iter().flatten().all(|&v| v == first) {
        log::warn!("constant chains: R-hat and ESS are undefined");
        return Ok(Diagnostics {
            rhat: f64::NAN,
            ess: f64::NAN,
        });
    }
    let split = split_chains(chains);
    let bulk = rank_normalize(&split);
    let pooled: Vec<f64> = split.iter().flatten().copied().collect();
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let folded: Vec<Vec<f64>> = split
        .iter()
        .map(|c| c.iter().map(|v| (v - median).abs()).collect())
        .collect();
    let folded = rank_normalize(&folded);
    let rhat = basic_rhat(&bulk).max(basic_rhat(&folded));
    let ess = basic_ess(&bulk);
    Ok(Diagnostics { rhat, ess })
}

/// Per-replicate summary of one model's inference on `B`.
#[derive(Debug, Clone)]
pub struct ReplicateRecord {
    pub estimate: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub variance: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    /// Row of `B` (0 is the intercept).
    pub row: usize,
    /// Outcome index.
    pub outcome: usize,
    pub mse: f64,
    pub coverage: f64,
    pub avg_posterior_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub replicate_count: usize,
    /// True when fewer than the recommended number of replicates were used.
    pub underpowered: bool,
    pub coefficients: Vec<CoefficientSummary>,
}

impl EvalReport {
    pub fn get(&self, row: usize, outcome: usize) -> Option<&CoefficientSummary> {
        self.coefficients
            .iter()
            .find(|c| c.row == row && c.outcome == outcome)
    }
}

/// MSE, interval coverage and average posterior variance against `truth`.
pub fn frequentist_eval(model: &str, records: &[ReplicateRecord], truth: &DMatrix<f64>) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no replicate records".into()));
    }
    let shape = truth.shape();
    for (idx, rec) in records.iter().enumerate() {
        let fields = [&rec.estimate, &rec.lower, &rec.upper, &rec.variance];
        if fields.iter().any(|m| m.shape() != shape) {
            return Err(Error::Dimension(format!(
                "replicate {idx} has fields that do not match the {}x{} estimand",
                shape.0, shape.1
            )));
        }
        if fields.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter(format!("replicate {idx} has missing values")));
        }
    }
    if records.len() < RECOMMENDED_REPLICATES {
        log::warn!(
            "{} replicates for model {model}; at least {RECOMMENDED_REPLICATES} are recommended",
            records.len()
        );
    }
    let count = records.len() as f64;
    let mut coefficients = Vec::with_capacity(shape.0 * shape.1);
    for j in 0..shape.1 {
        for i in 0..shape.0 {
            let f = truth[(i, j)];
            let mut sq = 0.0;
            let mut covered = 0usize;
            let mut var = 0.0;
            for rec in records {
                sq += (rec.estimate[(i, j)] - f).powi(2);
                if rec.lower[(i, j)] <= f && f <= rec.upper[(i, j)] {
                    covered += 1;
                }
                var += rec.variance[(i, j)];
            }
            coefficients.push(CoefficientSummary {
                row: i,
                outcome: j,
                mse: sq / count,
                coverage: covered as f64 / count,
                avg_posterior_variance: var / count,
            });
        }
    }
    Ok(EvalReport {
        model: model.to_string(),
        replicate_count: records.len(),
        underpowered: records.len() < RECOMMENDED_REPLICATES,
        coefficients,
    })
}

/// One-sided exact sign test of `a_i < b_i`; ties are dropped.
/// Returns `P(X ≥ wins)` for `X ~ Binomial(non-ties, 1/2)`.
pub fn paired_sign_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension("paired samples differ in length".into()));
    }
    let mut wins = 0usize;
    let mut trials = 0usize;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            wins += 1;
            trials += 1;
        } else if x > y {
            trials += 1;
        }
    }
    if trials == 0 {
        return Ok(1.0);
    }
    // log C(n, k) accumulated incrementally
    let log_half_n = trials as f64 * 0.5f64.ln();
    let mut log_choose = 0.0;
    let mut tail = 0.0;
    for k in 0..=trials {
        if k > 0 {
            log_choose += ((trials - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= wins {
            tail += (log_choose + log_half_n).exp();
        }
    }
    Ok(tail.min(1.0))
}

/// `KL(p ‖ q)` between two multivariate normals.
pub fn gaussian_kl(p: &GaussianSpec, q: &GaussianSpec) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension(format!(
            "KL between Gaussians of dimension {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    let d = p.dim() as f64;
    let q_chol = cholesky(&q.cov)?;
    let log_det_p = log_det_spd(&p.cov)?;
    let log_det_q = 2.0 * q_chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let trace = q_chol.solve(&p.cov).trace();
    let diff = &q.mean - &p.mean;
    let quad = diff.dot(&q_chol.solve(&diff));
    Ok((0.5 * (trace + quad - d + log_det_q - log_det_p)).max(0.0))
}

/// Gaussian on `vec(Y)` with mean `vec(mean)` and covariance
/// `spatial ⊗ W_φ + noise ⊗ I`.
#[derive(Debug, Clone)]
pub struct KroneckerGaussian {
    pub mean: DMatrix<f64>,
    pub spatial: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

impl KroneckerGaussian {
    pub fn to_dense(&self, covariance: &DMatrix<f64>) -> Result<GaussianSpec> {
        let n = self.mean.nrows();
        let cov = self.spatial.kronecker(covariance) + self.noise.kronecker(&DMatrix::identity(n, n));
        GaussianSpec::new(DVector::from_column_slice(self.mean.as_slice()), cov)
    }

    /// Non-spatial predictive: `N(vec(XB), Σ ⊗ I)`.
    pub fn nonspatial(x: &DMatrix<f64>, b: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Self {
        let k = sigma.nrows();
        KroneckerGaussian {
            mean: x * b,
            spatial: DMatrix::zeros(k, k),
            noise: sigma.clone(),
        }
    }

    /// Spatial predictive: `N(vec(XB), MᵀRM ⊗ W_φ + Mᵀ(I − R)M ⊗ I)`.
    pub fn spatial(x: &DMatrix<f64>, b: &DMatrix<f64>, m: &DMatrix<f64>, r: &DVector<f64>) -> Self {
        let rm = DMatrix::from_diagonal(r) * m;
        let sm = DMatrix::from_diagonal(&r.map(|v| 1.0 - v)) * m;
        KroneckerGaussian {
            mean: x * b,
            spatial: m.transpose() * rm,
            noise: m.transpose() * sm,
        }
    }
}

/// A fixed reference density `p` prepared for repeated `KL(p ‖ q)`
/// evaluations against Kronecker-structured `q` sharing one spatial basis.
///
/// Rotating rows by `Qᵀ` (eigenvectors of `W_φ⁻¹`) makes every such `q`
/// block diagonal with `k × k` blocks `spatial/λ_i + noise`.
#[derive(Debug, Clone)]
pub struct KlReference {
    rotated_mean: DMatrix<f64>,
    /// `blocks[i]` is the `k × k` block of the rotated `p` covariance at
    /// eigen-index `i`.
    blocks: Vec<DMatrix<f64>>,
    log_det_p: f64,
    q: DMatrix<f64>,
    lambda: DVector<f64>,
}

impl KlReference {
    pub fn new(p: &GaussianSpec, basis: &SpectralBasis) -> Result<Self> {
        let n = basis.q.nrows();
        if p.dim() % n != 0 {
            return Err(Error::Dimension(format!(
                "density of dimension {} is not a multiple of {n} regions",
                p.dim()
            )));
        }
        let k = p.dim() / n;
        let rot = DMatrix::<f64>::identity(k, k).kronecker(&basis.q);
        let cov = rot.transpose() * &p.cov * &rot;
        let blocks = (0..n)
            .map(|i| DMatrix::from_fn(k, k, |a, b| cov[(a * n + i, b * n + i)]))
            .collect();
        let mean = DMatrix::from_column_slice(n, k, p.mean.as_slice());
        Ok(KlReference {
            rotated_mean: basis.q.transpose() * mean,
            blocks,
            log_det_p: log_det_spd(&p.cov)?,
            q: basis.q.clone(),
            lambda: basis.lambda.clone(),
        })
    }

    pub fn kl_to(&self, q: &KroneckerGaussian) -> Result<f64> {
        let n = self.q.nrows();
        let k = self.blocks[0].nrows();
        if q.mean.shape() != (n, k) {
            return Err(Error::Dimension("predictive mean shape mismatch".into()));
        }
        let delta = self.q.transpose() * &q.mean - &self.rotated_mean;
        let mut trace = 0.0;
        let mut quad = 0.0;
        let mut log_det_q = 0.0;
        for i in 0..n {
            let block = &q.spatial / self.lambda[i] + &q.noise;
            let chol = cholesky(&block)?;
            log_det_q += 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            trace += chol.solve(&self.blocks[i]).trace();
            let d = delta.row(i).transpose();
            quad += d.dot(&chol.solve(&d));
        }
        let dim = (n * k) as f64;
        Ok((0.5 * (trace + quad - dim + log_det_q - self.log_det_p)).max(0.0))
    }
}

/// Posterior mean of `KL(p ‖ q)` over a set of predictive densities.
pub fn kl_fit_summary(reference: &KlReference, predictives: impl IntoIterator<Item = KroneckerGaussian>) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for q in predictives {
        total += reference.kl_to(&q)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::InsufficientData("no posterior draws for KL summary".into()));
    }
    Ok(total / count as f64)
}

fn centered(residuals: &[f64], n: usize) -> Result<Vec<f64>> {
    if residuals.len() != n {
        return Err(Error::Dimension(format!(
            "{} residuals for a graph of {n} regions",
            residuals.len()
        )));
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let e: Vec<f64> = residuals.iter().map(|v| v - mean).collect();
    let ss: f64 = e.iter().map(|v| v * v).sum();
    let scale: f64 = residuals.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    if ss <= 1e-24 * scale || ss == 0.0 {
        return Err(Error::DegenerateScale("residuals are constant".into()));
    }
    Ok(e)
}

/// Moran's I with binary weights: `(n/S0)·eᵀWe/eᵀe`.
pub fn morans_i(residuals: &[f64], graph: &AdjacencyGraph) -> Result<f64> {
    let n = graph.n();
    let e = centered(residuals, n)?;
    Ok(morans_i_centered(&e, graph))
}

fn morans_i_centered(e: &[f64], graph: &AdjacencyGraph) -> f64 {
    let n = e.len() as f64;
    let s0 = 2.0 * graph.edges().len() as f64;
    let cross: f64 = graph.edges().iter().map(|&(i, j)| 2.0 * e[i] * e[j]).sum();
    let ss: f64 = e.iter().map(|v| v * v).sum();
    n / s0 * cross / ss
}

/// Geary's C with binary weights: `((n−1)/(2S0))·Σ W_ij (e_i − e_j)²/eᵀe`.
pub fn gearys_c(residuals: &[f64], graph: &AdjacencyGraph) -> Result<f64> {
    let n = graph.n();
    let e = centered(residuals, n)?;
    Ok(gearys_c_centered(&e, graph))
}

fn gearys_c_centered(e: &[f64], graph: &AdjacencyGraph) -> f64 {
    let n = e.len() as f64;
    let s0 = 2.0 * graph.edges().len() as f64;
    let diff: f64 = graph
        .edges()
        .iter()
        .map(|&(i, j)| 2.0 * (e[i] - e[j]).powi(2))
        .sum();
    let ss: f64 = e.iter().map(|v| v * v).sum();
    (n - 1.0) / (2.0 * s0) * diff / ss
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AutocorrelationStatistic {
    /// Two-sided around the null mean `−1/(n−1)`.
    MoransI,
    /// One-sided: small values indicate positive autocorrelation.
    GearysC,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub statistic: AutocorrelationStatistic,
    pub value: f64,
    pub p_value: f64,
    pub permutations: usize,
}

/// Permutation test: `p = (1 + #{as or more extreme}) / (n_perm + 1)`.
pub fn permutation_test<R: Rng + ?Sized>(
    statistic: AutocorrelationStatistic,
    residuals: &[f64],
    graph: &AdjacencyGraph,
    n_perm: usize,
    rng: &mut R,
) -> Result<PermutationResult> {
    if n_perm < MIN_PERMUTATIONS {
        return Err(Error::InvalidParameter(format!(
            "at least {MIN_PERMUTATIONS} permutations required, got {n_perm}"
        )));
    }
    let n = graph.n();
    let mut e = centered(residuals, n)?;
    let eval = |e: &[f64]| match statistic {
        AutocorrelationStatistic::MoransI => morans_i_centered(e, graph),
        AutocorrelationStatistic::GearysC => gearys_c_centered(e, graph),
    };
    let observed = eval(&e);
    let null_mean = -1.0 / (n as f64 - 1.0);
    let tol = 1e-12 * observed.abs().max(1.0);
    let mut extreme = 0usize;
    for _ in 0..n_perm {
        e.shuffle(rng);
        let v = eval(&e);
        let hit = match statistic {
            AutocorrelationStatistic::MoransI => (v - null_mean).abs() >= (observed - null_mean).abs() - tol,
            AutocorrelationStatistic::GearysC => v <= observed + tol,
        };
        extreme += hit as usize;
    }
    Ok(PermutationResult {
        statistic,
        value: observed,
        p_value: (1 + extreme) as f64 / (n_perm + 1) as f64,
        permutations: n_perm,
    })
}

/// Log density of `vec(Y) ~ N(vec(XB), MᵀRM ⊗ W_φ + Mᵀ(I − R)M ⊗ I)`,
/// with `G` integrated out.
pub fn spatial_log_likelihood(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    basis: &SpectralBasis,
    b: &DMatrix<f64>,
    m: &DMatrix<f64>,
    r: &DVector<f64>,
) -> Result<f64> {
    let q = KroneckerGaussian::spatial(x, b, m, r);
    kronecker_log_density(y, basis, &q)
}

/// Log density of `vec(Y)` under a Kronecker-structured Gaussian.
pub fn kronecker_log_density(y: &DMatrix<f64>, basis: &SpectralBasis, dist: &KroneckerGaussian) -> Result<f64> {
    let (n, k) = y.shape();
    if dist.mean.shape() != (n, k) || basis.q.nrows() != n {
        return Err(Error::Dimension("log density inputs do not conform".into()));
    }
    let resid = basis.q.transpose() * (y - &dist.mean);
    let mut total = -0.5 * (n * k) as f64 * (2.0 * std::f64::consts::PI).ln();
    for i in 0..n {
        let block = &dist.spatial / basis.lambda[i] + &dist.noise;
        let chol = cholesky(&block)?;
        let d = resid.row(i).transpose();
        total -= chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        total -= 0.5 * d.dot(&chol.solve(&d));
    }
    Ok(total)
}

/// Log density of `vec(Y) ~ N(vec(XB), Σ ⊗ I)`.
pub fn nonspatial_log_likelihood(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> Result<f64> {
    let (n, k) = y.shape();
    let resid = y - x * b;
    let sigma_inv = spd_inverse(sigma)?;
    let quad = (&resid * sigma_inv * resid.transpose()).trace();
    let log_det = log_det_spd(sigma)?;
    Ok(-0.5 * ((n * k) as f64 * (2.0 * std::f64::consts::PI).ln() + n as f64 * log_det + quad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicResult {
    pub dic: f64,
    /// Effective number of parameters `2(log p(Y|θ̄) − mean log p(Y|θ))`.
    pub p_d: f64,
    pub log_lik_at_mean: f64,
    pub mean_log_lik: f64,
}

/// DIC from per-draw log-likelihoods and the log-likelihood at the posterior mean.
pub fn dic(log_liks: &[f64], log_lik_at_mean: f64) -> Result<DicResult> {
    if log_liks.is_empty() {
        return Err(Error::InsufficientData("no draws for DIC".into()));
    }
    if !log_lik_at_mean.is_finite() || log_liks.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            iteration: 0,
            state: "log-likelihood in DIC".into(),
        });
    }
    let mean_log_lik = log_liks.iter().sum::<f64>() / log_liks.len() as f64;
    let p_d = 2.0 * (log_lik_at_mean - mean_log_lik);
    Ok(DicResult {
        dic: -2.0 * log_lik_at_mean + 2.0 * p_d,
        p_d,
        log_lik_at_mean,
        mean_log_lik,
    })
}

fn mean_matrix<'a>(items: impl Iterator<Item = &'a DMatrix<f64>>) -> Option<DMatrix<f64>> {
    let mut acc: Option<DMatrix<f64>> = None;
    let mut count = 0usize;
    for m in items {
        acc = Some(match acc {
            Some(a) => a + m,
            None => m.clone(),
        });
        count += 1;
    }
    acc.map(|a| a / count as f64)
}

/// DIC of the spatial model from pooled chain draws, evaluated at the
/// posterior means of `B`, `M` and `R`.
pub fn spatial_dic(chains: &[ChainOutput], y: &DMatrix<f64>, x: &DMatrix<f64>, basis: &SpectralBasis) -> Result<DicResult> {
    let draws: Vec<&Draw> = chains.iter().flat_map(|c| c.draws.iter()).collect();
    if draws.is_empty() {
        return Err(Error::InsufficientData("no draws for DIC".into()));
    }
    let log_liks = draws
        .iter()
        .map(|d| spatial_log_likelihood(y, x, basis, &d.b, &d.m, &d.r))
        .collect::<Result<Vec<_>>>()?;
    let b = mean_matrix(draws.iter().map(|d| &d.b)).expect("non-empty");
    let m = mean_matrix(draws.iter().map(|d| &d.m)).expect("non-empty");
    let r = draws.iter().fold(DVector::zeros(m.nrows()), |acc, d| acc + &d.r) / draws.len() as f64;
    let at_mean = spatial_log_likelihood(y, x, basis, &b, &m, &r)?;
    dic(&log_liks, at_mean)
}

/// DIC of the non-spatial model at the posterior means of `B` and `Σ`.
pub fn nonspatial_dic(draws: &[NonSpatialDraw], y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DicResult> {
    if draws.is_empty() {
        return Err(Error::InsufficientData("no draws for DIC".into()));
    }
    let log_liks = draws
        .iter()
        .map(|d| nonspatial_log_likelihood(y, x, &d.b, &d.sigma))
        .collect::<Result<Vec<_>>>()?;
    let b = mean_matrix(draws.iter().map(|d| &d.b)).expect("non-empty");
    let sigma = mean_matrix(draws.iter().map(|d| &d.sigma)).expect("non-empty");
    let at_mean = nonspatial_log_likelihood(y, x, &b, &sigma)?;
    dic(&log_liks, at_mean)
}
