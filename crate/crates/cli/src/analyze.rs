//! Fits the non-spatial and spatial models to a user dataset and reports
//! coefficient tables, residual autocorrelation tests, MCMC diagnostics
//! and DIC.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use mbym2_core::datagen::design_with_intercept;
use mbym2_core::evaluation::{
    nonspatial_dic, permutation_test, rhat_ess, spatial_dic, AutocorrelationStatistic, DicResult, Diagnostics,
    PermutationResult, ReplicateRecord,
};
use mbym2_core::exec::Execution;
use mbym2_core::mcmc::{write_chains_csv, ChainOutput, Draw, SpatialProblem};
use mbym2_core::nonspatial::default_sigma0;
use mbym2_core::rng::{child_seed, rng_from_seed};
use mbym2_core::spatial::{design_gram_inverse, spectral_decompose, ScaledPrecision};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{AnalyzeConfig, ModelKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::format::sig6;
use crate::models::{fit_nonspatial_model, fit_spatial_model, model_seed};

/// Selected numeric columns of the input CSV.
#[derive(Debug, Clone)]
pub struct Table {
    pub covariates: Vec<String>,
    pub outcomes: Vec<String>,
    pub x1: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

fn is_prefixed(name: &str, prefix: char) -> bool {
    name.strip_prefix(prefix).is_some_and(|rest| !rest.is_empty() && rest.parse::<usize>().is_ok())
}

fn resolve(header: &csv::StringRecord, wanted: &[String], prefix: char, role: &str) -> CliResult<Vec<(usize, String)>> {
    if wanted.is_empty() {
        let found: Vec<(usize, String)> = header
            .iter()
            .enumerate()
            .filter(|(_, h)| is_prefixed(h, prefix))
            .map(|(i, h)| (i, h.to_string()))
            .collect();
        return Ok(found);
    }
    wanted
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == name)
                .map(|i| (i, name.clone()))
                .ok_or_else(|| CliError::config(format!("{role} column `{name}` not in data header")))
        })
        .collect()
}

/// Reads the configured outcome and covariate columns. Any missing or
/// non-numeric cell in a used column is an error naming every such row.
pub fn read_table(path: &Path, cfg: &AnalyzeConfig) -> CliResult<Table> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(path.display(), e))?;
    let header = reader.headers().map_err(|e| CliError::io(path.display(), e))?.clone();
    let outcomes = resolve(&header, &cfg.outcomes, 'y', "outcome")?;
    let covariates = resolve(&header, &cfg.covariates, 'x', "covariate")?;
    if outcomes.is_empty() {
        return Err(CliError::config("no outcome columns selected"));
    }
    let used: Vec<usize> = covariates.iter().chain(&outcomes).map(|(i, _)| *i).collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut bad_rows: Vec<usize> = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::io(path.display(), e))?;
        let values: Option<Vec<f64>> = used
            .iter()
            .map(|&c| record.get(c).and_then(|cell| cell.trim().parse::<f64>().ok()).filter(|v| v.is_finite()))
            .collect();
        match values {
            Some(v) => rows.push(v),
            None => bad_rows.push(index + 1),
        }
    }
    if !bad_rows.is_empty() {
        let list: Vec<String> = bad_rows.iter().map(|r| r.to_string()).collect();
        return Err(CliError::config(format!(
            "missing or non-numeric values in data rows {} (the tool does not impute; drop or fill these regions)",
            list.join(", ")
        )));
    }
    let n = rows.len();
    let p = covariates.len();
    let k = outcomes.len();
    Ok(Table {
        covariates: covariates.into_iter().map(|(_, n)| n).collect(),
        outcomes: outcomes.into_iter().map(|(_, n)| n).collect(),
        x1: DMatrix::from_fn(n, p, |i, j| rows[i][j]),
        y: DMatrix::from_fn(n, k, |i, j| rows[i][p + j]),
    })
}

/// Centres every column and scales it to unit sample standard deviation.
/// Constant columns are only centred, so they later fail the rank check.
pub fn standardize(m: &mut DMatrix<f64>) {
    let n = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / (n - 1.0)).sqrt();
        if sd > 1e-12 * mean.abs().max(1.0) {
            col.unscale_mut(sd);
        } else {
            col.fill(0.0);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoefficientRow {
    pub model: String,
    pub covariate: String,
    pub outcome: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    /// The credible interval excludes zero.
    pub significant: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticRow {
    pub model: String,
    pub parameter: String,
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainSummary {
    pub model: String,
    pub chain: usize,
    pub seed: u64,
    pub acceptance_m: f64,
    pub acceptance_r: f64,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AutocorrelationRow {
    pub outcome: String,
    #[serde(flatten)]
    pub result: PermutationResult,
}

pub struct AnalysisOutput {
    pub table: Table,
    pub autocorrelation: Vec<AutocorrelationRow>,
    pub coefficients: Vec<CoefficientRow>,
    pub records: BTreeMap<ModelKind, ReplicateRecord>,
    pub diagnostics: Vec<DiagnosticRow>,
    pub chain_summaries: Vec<ChainSummary>,
    pub chains: BTreeMap<ModelKind, Vec<ChainOutput>>,
    pub dic: BTreeMap<ModelKind, DicResult>,
    pub wall_time_secs: f64,
}

fn scalar_traces(chains: &[ChainOutput], f: impl Fn(&Draw) -> f64) -> Vec<Vec<f64>> {
    chains.iter().map(|c| c.trace(&f)).collect()
}

/// R-hat and ESS for every entry of `B`, the upper triangle of `M`, and `R`.
fn chain_diagnostics(model: ModelKind, chains: &[ChainOutput], table: &Table) -> CliResult<Vec<DiagnosticRow>> {
    let names: Vec<String> = std::iter::once("intercept".to_string()).chain(table.covariates.iter().cloned()).collect();
    let k = table.outcomes.len();
    let mut out = Vec::new();
    let mut push = |parameter: String, d: Diagnostics| {
        out.push(DiagnosticRow {
            model: model.name().into(),
            parameter,
            rhat: d.rhat,
            ess: d.ess,
        })
    };
    for (i, cov) in names.iter().enumerate() {
        for (j, outcome) in table.outcomes.iter().enumerate() {
            push(format!("B[{cov}:{outcome}]"), rhat_ess(&scalar_traces(chains, |d| d.b[(i, j)]))?);
        }
    }
    for j in 0..k {
        for i in 0..=j {
            push(format!("M[{}:{}]", i + 1, j + 1), rhat_ess(&scalar_traces(chains, |d| d.m[(i, j)]))?);
        }
    }
    for (j, outcome) in table.outcomes.iter().enumerate() {
        push(format!("r[{outcome}]"), rhat_ess(&scalar_traces(chains, |d| d.r[j]))?);
    }
    Ok(out)
}

fn coefficient_rows(model: ModelKind, record: &ReplicateRecord, table: &Table) -> Vec<CoefficientRow> {
    let names: Vec<String> = std::iter::once("intercept".to_string()).chain(table.covariates.iter().cloned()).collect();
    let mut rows = Vec::new();
    for (j, outcome) in table.outcomes.iter().enumerate() {
        for (i, covariate) in names.iter().enumerate() {
            let (lower, upper) = (record.lower[(i, j)], record.upper[(i, j)]);
            rows.push(CoefficientRow {
                model: model.name().into(),
                covariate: covariate.clone(),
                outcome: outcome.clone(),
                mean: record.estimate[(i, j)],
                lower,
                upper,
                significant: lower > 0.0 || upper < 0.0,
            });
        }
    }
    rows
}

pub fn run_analysis(config: &RunConfig, exec: Execution) -> CliResult<AnalysisOutput> {
    config.validate_analyze()?;
    let start = Instant::now();
    let cfg = &config.analyze;
    let data_path = config.data.as_ref().expect("validated");
    let mut table = read_table(data_path, cfg)?;
    let graph = config.graph()?;
    if graph.n() != table.y.nrows() {
        return Err(CliError::config(format!(
            "data has {} rows but the adjacency graph has {} regions",
            table.y.nrows(),
            graph.n()
        )));
    }
    if cfg.standardize {
        standardize(&mut table.x1);
        standardize(&mut table.y);
    }
    let x = design_with_intercept(&table.x1);
    let y = table.y.clone();
    let xtx_inv = design_gram_inverse(&x)?;
    let resid = &y - &x * (&xtx_inv * x.transpose() * &y);
    let mut autocorrelation = Vec::new();
    for (j, outcome) in table.outcomes.iter().enumerate() {
        let e: Vec<f64> = resid.column(j).iter().cloned().collect();
        for (s, stat) in [AutocorrelationStatistic::MoransI, AutocorrelationStatistic::GearysC].into_iter().enumerate() {
            let mut rng = rng_from_seed(child_seed(config.seed, 1_000 + 2 * j as u64 + s as u64));
            let result = permutation_test(stat, &e, &graph, cfg.permutations, &mut rng)?;
            autocorrelation.push(AutocorrelationRow { outcome: outcome.clone(), result });
        }
    }
    let sigma0 = default_sigma0(&y, &x)?;
    let mut coefficients = Vec::new();
    let mut records = BTreeMap::new();
    let mut diagnostics = Vec::new();
    let mut chain_summaries = Vec::new();
    let mut all_chains = BTreeMap::new();
    let mut dic = BTreeMap::new();
    for &model in &cfg.models {
        let seed = model_seed(config.seed, model);
        match model.structure() {
            None => {
                let fit = fit_nonspatial_model(&y, &x, config.sampler.v, &sigma0, cfg.nonspatial_draws, cfg.level, seed)?;
                dic.insert(model, nonspatial_dic(&fit.draws, &y, &x)?);
                coefficients.extend(coefficient_rows(model, &fit.record, &table));
                records.insert(model, fit.record);
            }
            Some(kind) => {
                let prec = ScaledPrecision::build(&graph, kind, config.alpha)?;
                let spectral = spectral_decompose(&prec)?;
                let problem = SpatialProblem::with_spectral(y.clone(), x.clone(), spectral)?;
                let fit = fit_spatial_model(&problem, &config.sampler, &sigma0, cfg.level, seed, exec)?;
                dic.insert(model, spatial_dic(&fit.chains, &y, &x, &problem.spectral)?);
                diagnostics.extend(chain_diagnostics(model, &fit.chains, &table)?);
                for (c, chain) in fit.chains.iter().enumerate() {
                    chain_summaries.push(ChainSummary {
                        model: model.name().into(),
                        chain: c,
                        seed: chain.seed,
                        acceptance_m: chain.acceptance_m,
                        acceptance_r: chain.acceptance_r,
                        wall_time_secs: chain.wall_time_secs,
                    });
                }
                coefficients.extend(coefficient_rows(model, &fit.record, &table));
                records.insert(model, fit.record);
                all_chains.insert(model, fit.chains);
            }
        }
    }
    Ok(AnalysisOutput {
        table,
        autocorrelation,
        coefficients,
        records,
        diagnostics,
        chain_summaries,
        chains: all_chains,
        dic,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

fn write_csv(dir: &Path, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(path.display(), e))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(path.display(), e))
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config: &'a RunConfig,
    master_seed: u64,
    model_seeds: BTreeMap<ModelKind, u64>,
    chains: &'a [ChainSummary],
    autocorrelation_alternatives: BTreeMap<&'static str, &'static str>,
    wall_time_secs: f64,
}

/// Writes `coefficients.csv`, `autocorrelation.csv`, `diagnostics.csv`,
/// `sampler.csv`, `dic.csv`, optional `chains_<model>.csv`, and
/// `manifest.json` into `dir`.
pub fn write_analysis(output: &AnalysisOutput, config: &RunConfig, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    write_csv(
        dir,
        "coefficients.csv",
        &["model", "covariate", "outcome", "mean", "lower", "upper", "significant"],
        output.coefficients.iter().map(|c| {
            vec![
                c.model.clone(),
                c.covariate.clone(),
                c.outcome.clone(),
                sig6(c.mean),
                sig6(c.lower),
                sig6(c.upper),
                c.significant.to_string(),
            ]
        }),
    )?;
    write_csv(
        dir,
        "autocorrelation.csv",
        &["outcome", "statistic", "value", "p_value", "permutations"],
        output.autocorrelation.iter().map(|a| {
            let stat = match a.result.statistic {
                AutocorrelationStatistic::MoransI => "morans-i",
                AutocorrelationStatistic::GearysC => "gearys-c",
            };
            vec![
                a.outcome.clone(),
                stat.into(),
                sig6(a.result.value),
                sig6(a.result.p_value),
                a.result.permutations.to_string(),
            ]
        }),
    )?;
    write_csv(
        dir,
        "diagnostics.csv",
        &["model", "parameter", "rhat", "ess"],
        output
            .diagnostics
            .iter()
            .map(|d| vec![d.model.clone(), d.parameter.clone(), sig6(d.rhat), sig6(d.ess)]),
    )?;
    write_csv(
        dir,
        "sampler.csv",
        &["model", "chain", "seed", "acceptance_m", "acceptance_r"],
        output.chain_summaries.iter().map(|c| {
            vec![
                c.model.clone(),
                c.chain.to_string(),
                c.seed.to_string(),
                sig6(c.acceptance_m),
                sig6(c.acceptance_r),
            ]
        }),
    )?;
    write_csv(
        dir,
        "dic.csv",
        &["model", "dic", "p_d"],
        output.dic.iter().map(|(m, d)| vec![m.name().into(), sig6(d.dic), sig6(d.p_d)]),
    )?;
    if config.analyze.write_chains {
        for (model, chains) in &output.chains {
            let path = dir.join(format!("chains_{}.csv", model.name()));
            let file = fs::File::create(&path).map_err(|e| CliError::io(path.display(), e))?;
            write_chains_csv(std::io::BufWriter::new(file), chains)?;
        }
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config,
        master_seed: config.seed,
        model_seeds: config.analyze.models.iter().map(|&m| (m, model_seed(config.seed, m))).collect(),
        chains: &output.chain_summaries,
        autocorrelation_alternatives: BTreeMap::from([
            ("morans-i", "two-sided about -1/(n-1)"),
            ("gearys-c", "one-sided, small values"),
        ]),
        wall_time_secs: output.wall_time_secs,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| CliError::io(path.display(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardization_is_idempotent() {
        let mut m = DMatrix::from_fn(20, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 * (j as f64 + 0.5) + 4.0);
        standardize(&mut m);
        for col in m.column_iter() {
            assert!(col.sum().abs() < 1e-12);
            assert!((col.norm_squared() / 19.0 - 1.0).abs() < 1e-12);
        }
        let once = m.clone();
        standardize(&mut m);
        assert!((m - once).amax() < 1e-12);
    }

    #[test]
    fn constant_column_is_zeroed() {
        let mut m = DMatrix::from_element(5, 1, 3.0);
        standardize(&mut m);
        assert!(m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_cells_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "region,x1,y1,note\n0,1.0,2.0,a\n1,,3.0,b\n2,2.0,NA,c\n3,1.5,2.5,\n").unwrap();
        let err = read_table(&path, &AnalyzeConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, CliError::Config(_)));
        assert!(msg.contains("rows 2, 3"), "{msg}");
    }

    #[test]
    fn named_columns_are_selected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "county,obesity,diabetes,cancer\nA,1,2,3\nB,4,5,6\n").unwrap();
        let cfg = AnalyzeConfig {
            outcomes: vec!["cancer".into(), "diabetes".into()],
            covariates: vec!["obesity".into()],
            ..AnalyzeConfig::default()
        };
        let t = read_table(&path, &cfg).unwrap();
        assert_eq!(t.y, DMatrix::from_row_slice(2, 2, &[3.0, 2.0, 6.0, 5.0]));
        assert_eq!(t.x1, DMatrix::from_row_slice(2, 1, &[1.0, 4.0]));
        let bad = AnalyzeConfig { outcomes: vec!["nope".into()], ..AnalyzeConfig::default() };
        assert!(matches!(read_table(&path, &bad), Err(CliError::Config(_))));
    }
}
