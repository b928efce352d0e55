//! `pds` command-line interface.
//!
//! Exit codes: 0 success, 2 validation failure, 3 runtime error.

pub mod service;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pds_core::calibration::{aggregate_to_state_monthly, compare_series, MonthlyStorage};
use pds_core::io::{self, IoError, PreparedModel, RunConfig, TraceFormat};
use pds_core::scenario::{self, ScenarioError, ScenarioSpec, SimulationTrace};
use pds_core::synthetic;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "pds", version, about = "District wheat distribution simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Run configuration JSON naming the dataset files.
    #[arg(long, visible_alias = "dataset", default_value = "data/synthetic/config.json")]
    pub config: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the dataset and report every violation.
    Validate(DatasetArgs),
    /// Run the cardholder estimation pipeline and write every stage.
    EstimateRations {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long, default_value = "cardholders.csv")]
        out: PathBuf,
    },
    /// Run one scenario, or every scenario in a directory.
    Simulate {
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Scenario JSON; defaults to the config's scenario.
        #[arg(long, conflicts_with = "batch")]
        scenario: Option<PathBuf>,
        /// Directory of scenario JSON files, run concurrently.
        #[arg(long)]
        batch: Option<PathBuf>,
        #[arg(long, default_value = "csv_long")]
        format: TraceFormat,
        /// Output file, or output directory with --batch.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare simulated state storage with the observed monthly series.
    Calibrate {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Also write the simulated monthly series as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the run API.
    Serve {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
    /// Write the seeded synthetic 75-district dataset.
    Synth {
        #[arg(long, default_value = "data/synthetic")]
        out: PathBuf,
        #[arg(long, default_value_t = synthetic::FIXTURE_SEED)]
        seed: u64,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(e) if e.is_validation() => EXIT_VALIDATION,
            CliError::Scenario(ScenarioError::InvalidSpec(_) | ScenarioError::UnknownDistrict { .. } | ScenarioError::Params(_)) => {
                EXIT_VALIDATION
            }
            CliError::Validation(_) => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

struct Loaded {
    config: RunConfig,
    dataset: io::Dataset,
    prepared: PreparedModel,
}

fn load(args: &DatasetArgs) -> Result<Loaded, CliError> {
    let config = RunConfig::load(&args.config)?;
    let dataset = io::load_dataset(&config)?;
    let prepared = io::prepare_inputs(&dataset, &config)?;
    Ok(Loaded { config, dataset, prepared })
}

fn scenario_for(loaded: &Loaded, path: Option<&Path>) -> Result<ScenarioSpec, CliError> {
    match path.map(Path::to_path_buf).or_else(|| loaded.config.scenario.as_ref().map(|p| loaded.config.resolve(p))) {
        Some(p) => Ok(io::load_scenario(&p)?),
        None => Err(CliError::Validation("no scenario given and the config names none".into())),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate(args) => {
            let loaded = load(&args)?;
            println!(
                "ok: {} districts, {} adjacency pairs, {} storage months",
                loaded.dataset.districts.len(),
                loaded.dataset.adjacency.ids().count(),
                loaded.dataset.storage_truth.len()
            );
            Ok(())
        }
        Command::EstimateRations { dataset, out } => {
            let loaded = load(&dataset)?;
            let mut buf = Vec::new();
            io::write_cardholders_csv(&loaded.prepared.rations, &mut buf).map_err(runtime)?;
            write_output(&out, &buf)
        }
        Command::Simulate { dataset, scenario, batch, format, out } => {
            let loaded = load(&dataset)?;
            match batch {
                Some(dir) => simulate_batch(&loaded, &dir, format, out.as_deref()),
                None => {
                    let spec = scenario_for(&loaded, scenario.as_deref())?;
                    let trace = scenario::run(&spec, &loaded.prepared.inputs)?;
                    let out = out.unwrap_or_else(|| PathBuf::from(format!("{}.{}", file_stem(&spec), format.extension())));
                    emit(&trace, format, &out)
                }
            }
        }
        Command::Calibrate { dataset, scenario, out } => {
            let loaded = load(&dataset)?;
            let spec = scenario_for(&loaded, scenario.as_deref())?;
            let trace = scenario::run(&spec, &loaded.prepared.inputs)?;
            let report = calibration_report(&trace, &loaded.dataset.storage_truth)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(runtime)?);
            if let Some(out) = out {
                let mut buf = Vec::new();
                io::write_storage_csv(&aggregate_to_state_monthly(&trace), &mut buf).map_err(runtime)?;
                write_output(&out, &buf)?;
            }
            Ok(())
        }
        Command::Serve { dataset, port, cache_dir, workers } => {
            let loaded = load(&dataset)?;
            let state = service::AppState::new(loaded.prepared, loaded.dataset.storage_truth, cache_dir, workers)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            serve(Arc::new(state), port)
        }
        Command::Synth { out, seed } => {
            synthetic::write_fixture(&synthetic::fixture(seed), &out).map_err(runtime)?;
            println!("wrote synthetic dataset to {}", out.display());
            Ok(())
        }
    }
}

fn serve(state: Arc<service::AppState>, port: u16) -> Result<(), CliError> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await.map_err(runtime)?;
        eprintln!("listening on {}", listener.local_addr().map_err(runtime)?);
        axum::serve(listener, service::router(state)).await.map_err(runtime)
    })
}

fn file_stem(spec: &ScenarioSpec) -> String {
    if spec.name.is_empty() { "trace".into() } else { spec.name.clone() }
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(runtime)?;
    }
    fs::write(path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn emit(trace: &SimulationTrace, format: TraceFormat, out: &Path) -> Result<(), CliError> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(runtime)?;
    }
    io::emit_trace(trace, format, out)?;
    Ok(())
}

fn simulate_batch(loaded: &Loaded, dir: &Path, format: TraceFormat, out: Option<&Path>) -> Result<(), CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| runtime(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let out_dir = out.unwrap_or(Path::new("."));
    let results: Vec<Result<(), CliError>> = std::thread::scope(|s| {
        let handles: Vec<_> = files
            .iter()
            .map(|path| {
                s.spawn(move || {
                    let spec = io::load_scenario(path)?;
                    let trace = scenario::run(&spec, &loaded.prepared.inputs)?;
                    let stem = path.file_stem().expect("json file").to_string_lossy().into_owned();
                    emit(&trace, format, &out_dir.join(format!("{stem}.{}", format.extension())))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("scenario thread panicked")).collect()
    });
    let mut worst: Option<CliError> = None;
    for (path, r) in files.iter().zip(results) {
        match r {
            Ok(()) => println!("{}: ok", path.display()),
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                    worst = Some(e);
                }
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

/// Metrics over the months present in both the simulated and observed series.
pub fn calibration_report(trace: &SimulationTrace, truth: &[MonthlyStorage]) -> Result<serde_json::Value, CliError> {
    let model = aggregate_to_state_monthly(trace);
    let paired: Vec<(&MonthlyStorage, &MonthlyStorage)> = model
        .iter()
        .filter_map(|m| truth.iter().find(|t| t.year == m.year && t.month == m.month).map(|t| (m, t)))
        .collect();
    let m: Vec<f64> = paired.iter().map(|p| p.0.storage_kg).collect();
    let t: Vec<f64> = paired.iter().map(|p| p.1.storage_kg).collect();
    let cmp = compare_series(&m, &t).map_err(|e| CliError::Validation(format!("calibration: {e}")))?;
    Ok(json!({
        "scenario": trace.scenario,
        "months": paired.iter().map(|p| p.0.label()).collect::<Vec<_>>(),
        "month_boundary": "last simulated week whose date falls in the month",
        "rmse_tonnes": cmp.rmse / 1000.0,
        "mape_percent": cmp.mape,
        "pearson_r": cmp.pearson_r,
    }))
}

pub fn main_with(cli: Cli) -> ExitCode {
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
