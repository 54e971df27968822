//! Run configuration: a single JSON document. Command-line flags override
//! fields after loading; absent fields take the defaults below.

use std::fs;
use std::path::{Path, PathBuf};

use mbym2_core::datagen::GenerationParams;
use mbym2_core::evaluation::HPD_MIN_DRAWS;
use mbym2_core::mcmc::SamplerSettings;
use mbym2_core::spatial::{AdjacencyGraph, PrecisionKind, california_graph};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Analyze,
    ScalePrecision,
}

/// Analysis models that can be fitted to a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Nonspatial,
    ConditionedCar,
    ConditionedSar,
    UnconditionedCar,
    UnconditionedSar,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Nonspatial,
        ModelKind::ConditionedCar,
        ModelKind::ConditionedSar,
        ModelKind::UnconditionedCar,
        ModelKind::UnconditionedSar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Nonspatial => "nonspatial",
            ModelKind::ConditionedCar => "conditioned-car",
            ModelKind::ConditionedSar => "conditioned-sar",
            ModelKind::UnconditionedCar => "unconditioned-car",
            ModelKind::UnconditionedSar => "unconditioned-sar",
        }
    }

    /// Spatial structure of the analysis model, if any.
    pub fn structure(self) -> Option<PrecisionKind> {
        match self {
            ModelKind::Nonspatial => None,
            ModelKind::ConditionedCar | ModelKind::UnconditionedCar => Some(PrecisionKind::Car),
            ModelKind::ConditionedSar | ModelKind::UnconditionedSar => Some(PrecisionKind::Sar),
        }
    }

    pub fn is_conditioned(self) -> bool {
        matches!(self, ModelKind::ConditionedCar | ModelKind::ConditionedSar)
    }

    /// Stable index used to derive per-model seeds.
    pub fn seed_index(self) -> u64 {
        ModelKind::ALL.iter().position(|&m| m == self).expect("listed") as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub replicates: usize,
    /// Credible level of every interval.
    pub level: f64,
    pub models: Vec<ModelKind>,
    pub nonspatial_draws: usize,
    pub conditioned_draws: usize,
    /// Compute posterior-mean KL divergences to the generating density.
    pub kl: bool,
    /// Abort when more than this fraction of replicates fail.
    pub max_failure_fraction: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            replicates: 300,
            level: 0.95,
            models: ModelKind::ALL.to_vec(),
            nonspatial_draws: 10_000,
            conditioned_draws: 20_000,
            kl: true,
            max_failure_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Outcome column names; empty selects every `y<number>` column.
    pub outcomes: Vec<String>,
    /// Covariate column names; empty selects every `x<number>` column.
    pub covariates: Vec<String>,
    pub standardize: bool,
    pub permutations: usize,
    pub models: Vec<ModelKind>,
    pub nonspatial_draws: usize,
    pub level: f64,
    /// Keep every spatial draw in `chains_<model>.csv`.
    pub write_chains: bool,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            outcomes: Vec::new(),
            covariates: Vec::new(),
            standardize: true,
            permutations: 10_000,
            models: vec![ModelKind::Nonspatial, ModelKind::UnconditionedCar],
            nonspatial_draws: 10_000,
            level: 0.95,
            write_chains: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: Option<usize>,
    /// Adjacency file; the bundled California graph when absent.
    pub adjacency: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Smoothing parameter of every CAR and SAR structure.
    pub alpha: f64,
    /// Spatial structure of the generating confounder and covariates.
    pub generation_structure: PrecisionKind,
    pub generation: GenerationParams,
    pub sampler: SamplerSettings,
    pub evaluation: EvaluationConfig,
    pub analyze: AnalyzeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: None,
            seed: 1,
            jobs: None,
            adjacency: None,
            data: None,
            out: None,
            alpha: 0.99,
            generation_structure: PrecisionKind::Car,
            generation: GenerationParams::paper_defaults(),
            sampler: SamplerSettings::default(),
            evaluation: EvaluationConfig::default(),
            analyze: AnalyzeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn graph(&self) -> CliResult<AdjacencyGraph> {
        match &self.adjacency {
            None => Ok(california_graph()),
            Some(path) => {
                if !path.exists() {
                    return Err(CliError::Io(format!("adjacency file {} not found", path.display())));
                }
                Ok(AdjacencyGraph::from_file(path)?)
            }
        }
    }

    fn check_common(&self) -> CliResult<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::config(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        Ok(())
    }

    pub fn validate_simulate(&self) -> CliResult<()> {
        self.check_common()?;
        let ev = &self.evaluation;
        if ev.replicates == 0 {
            return Err(CliError::config("replicates must be at least 1"));
        }
        if ev.models.is_empty() {
            return Err(CliError::config("model list is empty"));
        }
        check_level(ev.level)?;
        if ev.nonspatial_draws < HPD_MIN_DRAWS || ev.conditioned_draws < HPD_MIN_DRAWS {
            return Err(CliError::config(format!("draw counts must be at least {HPD_MIN_DRAWS}")));
        }
        if !(0.0..=1.0).contains(&ev.max_failure_fraction) {
            return Err(CliError::config("max_failure_fraction must lie in [0, 1]"));
        }
        self.generation
            .validate()
            .map_err(|e| CliError::config(format!("generation parameters: {e}")))?;
        if ev.models.iter().any(|m| matches!(m, ModelKind::UnconditionedCar | ModelKind::UnconditionedSar)) {
            self.check_sampler()?;
        }
        Ok(())
    }

    pub fn validate_analyze(&self) -> CliResult<()> {
        self.check_common()?;
        let an = &self.analyze;
        if an.models.is_empty() {
            return Err(CliError::config("model list is empty"));
        }
        if let Some(m) = an.models.iter().find(|m| m.is_conditioned()) {
            return Err(CliError::config(format!(
                "{} needs the true coregionalisation and is only available in simulate mode",
                m.name()
            )));
        }
        check_level(an.level)?;
        if an.permutations < mbym2_core::evaluation::MIN_PERMUTATIONS {
            return Err(CliError::config(format!(
                "permutations must be at least {}",
                mbym2_core::evaluation::MIN_PERMUTATIONS
            )));
        }
        if an.nonspatial_draws < HPD_MIN_DRAWS {
            return Err(CliError::config(format!("nonspatial_draws must be at least {HPD_MIN_DRAWS}")));
        }
        match &self.data {
            None => return Err(CliError::config("analyze needs a data file")),
            Some(p) if !p.exists() => return Err(CliError::Io(format!("data file {} not found", p.display()))),
            _ => {}
        }
        if self.out.is_none() {
            return Err(CliError::config("analyze needs an output directory"));
        }
        self.check_sampler()
    }

    fn check_sampler(&self) -> CliResult<()> {
        self.sampler.validate()?;
        if self.sampler.draws_per_chain() == 0 {
            return Err(CliError::config("sampler settings record no draws"));
        }
        Ok(())
    }
}

fn check_level(level: f64) -> CliResult<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(CliError::config(format!("level = {level} must lie in (0, 1)")))
    }
}
