//! Model fits shared by `simulate` and `analyze`, so both paths produce
//! identical numbers for the same data and seed.

use mbym2_core::closed_form::{conditional_intervals, conditioned_estimate, sample_conditioned, ConditionedPosterior};
use mbym2_core::evaluation::{hpd_interval, kl_fit_summary, KlReference, KroneckerGaussian, ReplicateRecord};
use mbym2_core::exec::Execution;
use mbym2_core::mcmc::{run_chains, ChainOutput, SamplerSettings, SpatialConfig, SpatialProblem};
use mbym2_core::nonspatial::{fit_nonspatial, sample_nonspatial, NonSpatialDraw, NonSpatialPosterior};
use mbym2_core::rng::{child_seed, rng_from_seed};
use mbym2_core::spatial::ProjectedSpectral;
use mbym2_core::Result;
use nalgebra::{DMatrix, DVector};

use crate::config::ModelKind;

/// Seed of one model fit derived from a dataset-level seed.
pub fn model_seed(dataset_seed: u64, model: ModelKind) -> u64 {
    child_seed(dataset_seed, 1 + model.seed_index())
}

/// Posterior mean, elementwise HPD interval and variance from draws of `B`.
pub fn summarize_draws(draws: &[DMatrix<f64>], level: f64) -> Result<ReplicateRecord> {
    let (q, k) = draws[0].shape();
    let mut record = ReplicateRecord {
        estimate: DMatrix::zeros(q, k),
        lower: DMatrix::zeros(q, k),
        upper: DMatrix::zeros(q, k),
        variance: DMatrix::zeros(q, k),
    };
    let count = draws.len() as f64;
    let mut values = Vec::with_capacity(draws.len());
    for i in 0..q {
        for j in 0..k {
            values.clear();
            values.extend(draws.iter().map(|d| d[(i, j)]));
            let mean = values.iter().sum::<f64>() / count;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
            values.sort_by(f64::total_cmp);
            let (lo, hi) = hpd_interval(&values, level)?;
            record.estimate[(i, j)] = mean;
            record.variance[(i, j)] = var;
            record.lower[(i, j)] = lo;
            record.upper[(i, j)] = hi;
        }
    }
    Ok(record)
}

pub struct NonspatialFit {
    pub record: ReplicateRecord,
    pub posterior: NonSpatialPosterior,
    pub draws: Vec<NonSpatialDraw>,
}

/// Exact conjugate fit: exact posterior mean and variance, HPD intervals
/// from `count` exact draws.
pub fn fit_nonspatial_model(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    v: f64,
    sigma0: &DMatrix<f64>,
    count: usize,
    level: f64,
    seed: u64,
) -> Result<NonspatialFit> {
    let posterior = fit_nonspatial(y, x, v, sigma0)?;
    let draws = sample_nonspatial(&posterior, count, &mut rng_from_seed(seed))?;
    let b: Vec<DMatrix<f64>> = draws.iter().map(|d| d.b.clone()).collect();
    let mut record = summarize_draws(&b, level)?;
    record.estimate = posterior.b_hat.clone();
    record.variance = posterior.marginal_variances();
    Ok(NonspatialFit { record, posterior, draws })
}

impl NonspatialFit {
    pub fn kl(&self, reference: &KlReference, x: &DMatrix<f64>) -> Result<f64> {
        kl_fit_summary(reference, self.draws.iter().map(|d| KroneckerGaussian::nonspatial(x, &d.b, &d.sigma)))
    }
}

pub struct ConditionedFit {
    pub record: ReplicateRecord,
    pub posterior: ConditionedPosterior,
    pub draws: Vec<DMatrix<f64>>,
}

/// Closed-form fit at fixed `(M, R)` with normal-theory intervals; `count`
/// exact draws are kept for predictive summaries (none when zero).
pub fn fit_conditioned_model(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    m: &DMatrix<f64>,
    r: &DVector<f64>,
    proj: &ProjectedSpectral,
    count: usize,
    level: f64,
    seed: u64,
) -> Result<ConditionedFit> {
    let posterior = conditioned_estimate(y, x, m, r, proj)?;
    let intervals = conditional_intervals(&posterior, level)?;
    let record = ReplicateRecord {
        estimate: posterior.b_tilde.clone(),
        lower: intervals.lower,
        upper: intervals.upper,
        variance: posterior.marginal_variances(),
    };
    let draws = if count > 0 {
        sample_conditioned(&posterior, count, &mut rng_from_seed(seed))?
    } else {
        Vec::new()
    };
    Ok(ConditionedFit { record, posterior, draws })
}

impl ConditionedFit {
    pub fn kl(&self, reference: &KlReference, x: &DMatrix<f64>) -> Result<f64> {
        let (m, r) = (&self.posterior.m, &self.posterior.r);
        kl_fit_summary(reference, self.draws.iter().map(|b| KroneckerGaussian::spatial(x, b, m, r)))
    }
}

pub struct SpatialFit {
    pub record: ReplicateRecord,
    pub chains: Vec<ChainOutput>,
    pub chain_seeds: Vec<u64>,
}

/// Full MCMC fit with HPD intervals from the pooled chains.
pub fn fit_spatial_model(
    problem: &SpatialProblem,
    settings: &SamplerSettings,
    sigma0: &DMatrix<f64>,
    level: f64,
    seed: u64,
    exec: Execution,
) -> Result<SpatialFit> {
    let config = SpatialConfig::new(settings.clone(), sigma0.clone(), seed);
    let chains = run_chains(problem, &config, exec)?;
    let b: Vec<DMatrix<f64>> = chains.iter().flat_map(|c| c.draws.iter().map(|d| d.b.clone())).collect();
    let record = summarize_draws(&b, level)?;
    let chain_seeds = chains.iter().map(|c| c.seed).collect();
    Ok(SpatialFit { record, chains, chain_seeds })
}

impl SpatialFit {
    pub fn kl(&self, reference: &KlReference, x: &DMatrix<f64>) -> Result<f64> {
        kl_fit_summary(
            reference,
            self.chains
                .iter()
                .flat_map(|c| c.draws.iter())
                .map(|d| KroneckerGaussian::spatial(x, &d.b, &d.m, &d.r)),
        )
    }

    pub fn acceptance(&self) -> (f64, f64) {
        let n = self.chains.len() as f64;
        let m = self.chains.iter().map(|c| c.acceptance_m).sum::<f64>() / n;
        let r = self.chains.iter().map(|c| c.acceptance_r).sum::<f64>() / n;
        (m, r)
    }
}
