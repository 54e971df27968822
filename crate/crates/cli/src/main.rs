use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mbym2_cli::analyze::{run_analysis, write_analysis};
use mbym2_cli::config::{Mode, RunConfig};
use mbym2_cli::error::{CliError, CliResult};
use mbym2_cli::scale::scale_report;
use mbym2_cli::simulate::{run_simulation, write_simulation};
use mbym2_core::exec::{with_jobs, Execution};
use mbym2_core::spatial::{california_graph, AdjacencyGraph, PrecisionKind};

#[derive(Parser)]
#[command(name = "mbym2", version, about = "Multivariate spatial confounding models for areal data")]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "MBYM2_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the replicate simulation study and write evaluation reports.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the models to a dataset and write coefficient tables and diagnostics.
    Analyze {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        adjacency: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Report the scaling constant of a CAR or SAR precision.
    ScalePrecision {
        /// Adjacency file; the bundled California graph when absent.
        #[arg(long)]
        adjacency: Option<PathBuf>,
        #[arg(long, default_value_t = 0.99)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = Kind::Car)]
        kind: Kind,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Car,
    Sar,
}

fn load(config: Option<PathBuf>, expected: Mode) -> CliResult<RunConfig> {
    let cfg = match config {
        Some(path) => RunConfig::load(&path)?,
        None => RunConfig::default(),
    };
    match cfg.mode {
        Some(mode) if mode != expected => Err(CliError::config(format!("config declares mode {mode:?}, expected {expected:?}"))),
        _ => Ok(cfg),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let jobs_flag = cli.jobs;
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let mut cfg = load(config, Mode::Simulate)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if out.is_some() {
                cfg.out = out;
            }
            let dir = cfg.out.clone().ok_or_else(|| CliError::config("simulate needs --out or `out` in the config"))?;
            let jobs = jobs_flag.or(cfg.jobs).unwrap_or(0);
            let output = with_jobs(jobs, || run_simulation(&cfg, Execution::Parallel))?;
            write_simulation(&output, &cfg, &dir)?;
            log::info!("simulation written to {}", dir.display());
            if !output.failures.is_empty() {
                log::warn!("{} replicate(s) failed; see manifest.json", output.failures.len());
            }
            Ok(())
        }
        Command::Analyze { config, data, adjacency, out, seed } => {
            let mut cfg = load(config, Mode::Analyze)?;
            if data.is_some() {
                cfg.data = data;
            }
            if adjacency.is_some() {
                cfg.adjacency = adjacency;
            }
            if out.is_some() {
                cfg.out = out;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let jobs = jobs_flag.or(cfg.jobs).unwrap_or(0);
            let output = with_jobs(jobs, || run_analysis(&cfg, Execution::Parallel))?;
            let dir = cfg.out.clone().expect("validated");
            write_analysis(&output, &cfg, &dir)?;
            log::info!("analysis written to {}", dir.display());
            Ok(())
        }
        Command::ScalePrecision { adjacency, alpha, kind, json } => {
            let graph = match adjacency {
                Some(path) => {
                    if !path.exists() {
                        return Err(CliError::Io(format!("adjacency file {} not found", path.display())));
                    }
                    AdjacencyGraph::from_file(&path)?
                }
                None => california_graph(),
            };
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(CliError::config(format!("alpha = {alpha} must lie in (0, 1)")));
            }
            let kind = match kind {
                Kind::Car => PrecisionKind::Car,
                Kind::Sar => PrecisionKind::Sar,
            };
            let report = scale_report(&graph, kind, alpha)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.render());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}
