//! Replicated simulation study: generate datasets, fit every requested
//! model, and evaluate point estimates and intervals against `F = B + D`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use mbym2_core::datagen::{DataGenerator, Dataset};
use mbym2_core::evaluation::{frequentist_eval, EvalReport, KlReference, ReplicateRecord};
use mbym2_core::exec::Execution;
use mbym2_core::mcmc::SpatialProblem;
use mbym2_core::nonspatial::default_sigma0;
use mbym2_core::rng::{child_seed, rng_from_seed};
use mbym2_core::spatial::{projected_spectral, spectral_decompose, PrecisionKind, ScaledPrecision, SpectralBasis};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{ModelKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::format::{coefficient_label, sig6};
use crate::models::{fit_conditioned_model, fit_nonspatial_model, fit_spatial_model, model_seed};

/// Spatial structures and generator shared by every replicate.
pub struct SimulationSetup {
    pub generator: DataGenerator,
    structures: BTreeMap<PrecisionKind, (ScaledPrecision, SpectralBasis)>,
}

impl SimulationSetup {
    pub fn new(config: &RunConfig) -> CliResult<Self> {
        let graph = config.graph()?;
        let mut kinds: Vec<PrecisionKind> = config.evaluation.models.iter().filter_map(|m| m.structure()).collect();
        kinds.push(config.generation_structure);
        kinds.sort_by_key(|k| k.to_string());
        kinds.dedup();
        let mut structures = BTreeMap::new();
        for kind in kinds {
            let prec = ScaledPrecision::build(&graph, kind, config.alpha)?;
            let spec = spectral_decompose(&prec)?;
            structures.insert(kind, (prec, spec));
        }
        let generation = &structures[&config.generation_structure].0;
        let generator = DataGenerator::new(config.generation.clone(), generation)?;
        Ok(SimulationSetup { generator, structures })
    }

    fn structure(&self, kind: PrecisionKind) -> &(ScaledPrecision, SpectralBasis) {
        &self.structures[&kind]
    }
}

/// Seed of replicate `index`; the dataset and every model fit derive from it.
pub fn replicate_seed(master: u64, index: usize) -> u64 {
    child_seed(master, index as u64)
}

/// Dataset of one replicate, reproducible from the master seed.
pub fn replicate_dataset(setup: &SimulationSetup, dataset_seed: u64) -> CliResult<Dataset> {
    Ok(setup.generator.sample(&mut rng_from_seed(child_seed(dataset_seed, 0)))?)
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelOutcome {
    #[serde(skip)]
    pub record: ReplicateRecord,
    pub kl: Option<f64>,
    pub seed: u64,
    pub chain_seeds: Vec<u64>,
    pub acceptance_m: Option<f64>,
    pub acceptance_r: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub seed: u64,
    pub models: BTreeMap<ModelKind, ModelOutcome>,
}

/// Fits every configured model to one replicate.
pub fn run_replicate(setup: &SimulationSetup, config: &RunConfig, index: usize) -> CliResult<ReplicateResult> {
    let ev = &config.evaluation;
    let seed = replicate_seed(config.seed, index);
    let data = replicate_dataset(setup, seed)?;
    let (y, x) = (&data.y, &data.x);
    let sigma0 = default_sigma0(y, x)?;
    let mats = &setup.generator.mats;
    let truth_density = if ev.kl { Some(setup.generator.marginal_density(x)?) } else { None };
    let reference = |kind: PrecisionKind| -> CliResult<Option<KlReference>> {
        match &truth_density {
            Some(p) => Ok(Some(KlReference::new(p, &setup.structure(kind).1)?)),
            None => Ok(None),
        }
    };
    let mut models = BTreeMap::new();
    for &model in &ev.models {
        let start = Instant::now();
        let mseed = model_seed(seed, model);
        let outcome = match model.structure() {
            None => {
                let fit = fit_nonspatial_model(y, x, config.sampler.v, &sigma0, ev.nonspatial_draws, ev.level, mseed)?;
                let kl = match reference(config.generation_structure)? {
                    Some(r) => Some(fit.kl(&r, x)?),
                    None => None,
                };
                ModelOutcome::new(fit.record, kl, mseed)
            }
            Some(kind) if model.is_conditioned() => {
                let (prec, spec) = setup.structure(kind);
                let proj = projected_spectral(prec, spec, x)?;
                let draws = if ev.kl { ev.conditioned_draws } else { 0 };
                let fit = fit_conditioned_model(y, x, &mats.a, &mats.rho, &proj, draws, ev.level, mseed)?;
                let kl = match reference(kind)? {
                    Some(r) => Some(fit.kl(&r, x)?),
                    None => None,
                };
                ModelOutcome::new(fit.record, kl, mseed)
            }
            Some(kind) => {
                let spec = setup.structure(kind).1.clone();
                let problem = SpatialProblem::with_spectral(y.clone(), x.clone(), spec)?;
                let fit = fit_spatial_model(&problem, &config.sampler, &sigma0, ev.level, mseed, Execution::Sequential)?;
                let kl = match reference(kind)? {
                    Some(r) => Some(fit.kl(&r, x)?),
                    None => None,
                };
                let (am, ar) = fit.acceptance();
                let mut outcome = ModelOutcome::new(fit.record, kl, mseed);
                outcome.chain_seeds = fit.chain_seeds;
                outcome.acceptance_m = Some(am);
                outcome.acceptance_r = Some(ar);
                outcome
            }
        };
        models.insert(model, ModelOutcome { seconds: start.elapsed().as_secs_f64(), ..outcome });
    }
    Ok(ReplicateResult { index, seed, models })
}

impl ModelOutcome {
    fn new(record: ReplicateRecord, kl: Option<f64>, seed: u64) -> Self {
        ModelOutcome {
            record,
            kl,
            seed,
            chain_seeds: Vec::new(),
            acceptance_m: None,
            acceptance_r: None,
            seconds: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateFailure {
    pub index: usize,
    pub seed: u64,
    pub message: String,
}

pub struct SimulationOutput {
    pub truth: DMatrix<f64>,
    pub reports: Vec<EvalReport>,
    pub replicates: Vec<ReplicateResult>,
    pub failures: Vec<ReplicateFailure>,
    pub wall_time_secs: f64,
}

impl SimulationOutput {
    pub fn report(&self, model: ModelKind) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.model == model.name())
    }

    /// Per-replicate point estimates of one coefficient, in replicate order.
    pub fn estimates(&self, model: ModelKind, row: usize, outcome: usize) -> Vec<f64> {
        self.replicates
            .iter()
            .filter_map(|r| r.models.get(&model))
            .map(|m| m.record.estimate[(row, outcome)])
            .collect()
    }

    pub fn kls(&self, model: ModelKind) -> Vec<f64> {
        self.replicates
            .iter()
            .filter_map(|r| r.models.get(&model).and_then(|m| m.kl))
            .collect()
    }
}

/// Runs the whole study. Replicates run in parallel under `exec`; results
/// are collected in replicate order so output does not depend on scheduling.
pub fn run_simulation(config: &RunConfig, exec: Execution) -> CliResult<SimulationOutput> {
    config.validate_simulate()?;
    let start = Instant::now();
    let setup = SimulationSetup::new(config)?;
    let ev = &config.evaluation;
    let results = exec.map_indices(ev.replicates, |i| (i, run_replicate(&setup, config, i)));
    let mut replicates = Vec::with_capacity(ev.replicates);
    let mut failures = Vec::new();
    for (index, result) in results {
        match result {
            Ok(r) => replicates.push(r),
            Err(e) => {
                log::warn!("replicate {index} failed: {e}");
                failures.push(ReplicateFailure {
                    index,
                    seed: replicate_seed(config.seed, index),
                    message: e.to_string(),
                });
            }
        }
    }
    check_failures(&failures, ev.replicates, ev.max_failure_fraction)?;
    let truth = setup.generator.unconditional_estimand();
    let mut reports = Vec::new();
    for &model in &ev.models {
        let records: Vec<ReplicateRecord> =
            replicates.iter().filter_map(|r| r.models.get(&model)).map(|m| m.record.clone()).collect();
        reports.push(frequentist_eval(model.name(), &records, &truth)?);
    }
    Ok(SimulationOutput {
        truth,
        reports,
        replicates,
        failures,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Errors when more than `max_fraction` of `replicates` failed.
pub fn check_failures(failures: &[ReplicateFailure], replicates: usize, max_fraction: f64) -> CliResult<()> {
    let allowed = (max_fraction * replicates as f64).floor() as usize;
    match failures.first() {
        Some(first) if failures.len() > allowed => Err(CliError::Numerical(format!(
            "{} of {replicates} replicates failed (first: replicate {}: {})",
            failures.len(),
            first.index,
            first.message
        ))),
        _ => Ok(()),
    }
}

const BLOCKS: [&str; 3] = ["mse", "coverage", "avg_posterior_variance"];

/// Table layout: one row per (block, model), one column per coefficient.
pub fn report_csv(output: &SimulationOutput) -> CliResult<String> {
    let (q, k) = output.truth.shape();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["block".to_string(), "model".to_string()];
    for i in 0..q {
        for j in 0..k {
            header.push(coefficient_label(i, j));
        }
    }
    w.write_record(&header)?;
    for block in BLOCKS {
        for report in &output.reports {
            let mut row = vec![block.to_string(), report.model.clone()];
            for i in 0..q {
                for j in 0..k {
                    let c = report.get(i, j).expect("coefficient present");
                    let value = match block {
                        "mse" => c.mse,
                        "coverage" => c.coverage,
                        _ => c.avg_posterior_variance,
                    };
                    row.push(sig6(value));
                }
            }
            w.write_record(&row)?;
        }
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> CliResult<String> {
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

fn replicates_csv(output: &SimulationOutput) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["replicate", "model", "coefficient", "estimate", "lower", "upper", "variance"])?;
    for r in &output.replicates {
        for (model, m) in &r.models {
            let rec = &m.record;
            let (q, k) = rec.estimate.shape();
            for i in 0..q {
                for j in 0..k {
                    w.write_record([
                        r.index.to_string(),
                        model.name().to_string(),
                        coefficient_label(i, j),
                        sig6(rec.estimate[(i, j)]),
                        sig6(rec.lower[(i, j)]),
                        sig6(rec.upper[(i, j)]),
                        sig6(rec.variance[(i, j)]),
                    ])?;
                }
            }
        }
    }
    into_string(w)
}

fn kl_csv(output: &SimulationOutput) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["replicate", "model", "posterior_mean_kl"])?;
    for r in &output.replicates {
        for (model, m) in &r.models {
            if let Some(kl) = m.kl {
                w.write_record([r.index.to_string(), model.name().to_string(), sig6(kl)])?;
            }
        }
    }
    into_string(w)
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    replicate_count: usize,
    failed_replicates: usize,
    truth: Vec<Vec<f64>>,
    reports: &'a [EvalReport],
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config: &'a RunConfig,
    master_seed: u64,
    wall_time_secs: f64,
    replicates: &'a [ReplicateResult],
    failures: &'a [ReplicateFailure],
}

fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    let path = dir.join(name);
    let mut f = fs::File::create(&path).map_err(|e| CliError::io(path.display(), e))?;
    f.write_all(contents.as_bytes()).map_err(|e| CliError::io(path.display(), e))
}

/// Writes `report.csv`, `report.json`, `replicates.csv`, `kl.csv` and
/// `manifest.json` into `dir`. Only the manifest carries timings.
pub fn write_simulation(output: &SimulationOutput, config: &RunConfig, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    write_file(dir, "report.csv", &report_csv(output)?)?;
    let doc = ReportDocument {
        replicate_count: output.replicates.len(),
        failed_replicates: output.failures.len(),
        truth: mbym2_core::datagen::matrix_to_nested(&output.truth),
        reports: &output.reports,
    };
    write_file(dir, "report.json", &serde_json::to_string_pretty(&doc)?)?;
    write_file(dir, "replicates.csv", &replicates_csv(output)?)?;
    if config.evaluation.kl {
        write_file(dir, "kl.csv", &kl_csv(output)?)?;
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config,
        master_seed: config.seed,
        wall_time_secs: output.wall_time_secs,
        replicates: &output.replicates,
        failures: &output.failures,
    };
    write_file(dir, "manifest.json", &serde_json::to_string_pretty(&manifest)?)
}
