//! Dataset files, run configuration, model preparation and trace output.
//!
//! Tabular inputs are CSV with a header row. Masses are tonnes on disk and kg
//! in memory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{depletion_rate_from_year, CalibrationError, MonthlyStorage, YearMode};
use crate::demand::{
    baseline_undernourished, fit_intercept_for_slope, fit_undernourishment_line, scale_demand_to_state, weekly_demand,
    DemandError, EntitlementPolicy, FitMode, LineFit, StatePoint, UndernourishmentModel, UNDERNOURISHMENT_SLOPE,
};
use crate::domain::{
    kg_to_tonnes, tonnes_to_kg, CardholderEstimate, DistrictId, DistrictIndex, DistrictRecord, DriveTimeMatrix,
    EstimateStage, HarvestRecord, ValidationReport, Violation,
};
use crate::engine::{EngineParams, Eq2Convention};
use crate::ration::{
    estimate_cardholders, AdjacencyList, CensusFractionTable, FractionRow, RationError, RationPipelineOutput,
    RegionalEstimates, ScaleOptions, Series, StateTotals,
};
use crate::scenario::{Metric, ScenarioSpec, SimulationInputs, SimulationTrace};
use crate::transport::AllocationStrategy;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}:{line}:{column}: {message}")]
    Parse { file: String, line: u64, column: usize, message: String },
    #[error("dataset failed validation:\n{0}")]
    ValidationFailed(ValidationReport),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ration(#[from] RationError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

impl IoError {
    /// Errors caused by the dataset or config contents rather than the run.
    pub fn is_validation(&self) -> bool {
        matches!(self, IoError::Parse { .. } | IoError::ValidationFailed(_) | IoError::Config(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn file_label(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UndernourishmentSettings {
    /// Pinned slope; fitted from the state table when null.
    pub slope: Option<f64>,
    /// Pinned intercept; fitted from the state table when null, or 0 without one.
    pub intercept: Option<f64>,
    pub spike_gain: f64,
}

impl Default for UndernourishmentSettings {
    fn default() -> Self {
        Self { slope: Some(UNDERNOURISHMENT_SLOPE), intercept: Some(0.0), spike_gain: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepletionSettings {
    pub year: i32,
    pub mode: YearMode,
}

impl Default for DepletionSettings {
    fn default() -> Self {
        Self { year: 2019, mode: YearMode::PriorYear }
    }
}

fn default_procured_share() -> f64 {
    0.3
}

/// JSON run configuration. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub districts: PathBuf,
    pub fractions: PathBuf,
    pub adjacency: PathBuf,
    pub drive_times: PathBuf,
    pub state_totals: PathBuf,
    pub yields: PathBuf,
    #[serde(default)]
    pub undernourishment_states: Option<PathBuf>,
    #[serde(default)]
    pub storage_truth: Option<PathBuf>,
    #[serde(default)]
    pub harvest_history: Option<PathBuf>,
    #[serde(default)]
    pub initial_stock: Option<PathBuf>,
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub engine: EngineParams,
    /// Overrides `engine.eq2_convention` when set.
    #[serde(default)]
    pub eq2_convention: Option<Eq2Convention>,
    #[serde(default)]
    pub entitlement: EntitlementPolicy,
    #[serde(default)]
    pub undernourishment: UndernourishmentSettings,
    #[serde(default)]
    pub allocation: AllocationStrategy,
    #[serde(default)]
    pub ration: ScaleOptions,
    #[serde(default)]
    pub depletion: DepletionSettings,
    #[serde(default)]
    pub state_production_tonnes: Option<f64>,
    #[serde(default)]
    pub flood_destroys_farm_storage: bool,
    /// Last year's procured fraction of non-wasted harvest, used when no
    /// harvest history file is given.
    #[serde(default = "default_procured_share")]
    pub default_procured_share: f64,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut config: RunConfig = serde_json::from_str(&text).map_err(|e| json_error(path, &e))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.validate()?;
        Ok(config)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.base_dir.join(p) }
    }

    pub fn engine_params(&self) -> EngineParams {
        let mut params = self.engine.clone();
        if let Some(c) = self.eq2_convention {
            params.eq2_convention = c;
        }
        params
    }

    pub fn validate(&self) -> Result<(), IoError> {
        self.engine_params().validate().map_err(|e| IoError::Config(e.to_string()))?;
        self.entitlement.validate().map_err(|e| IoError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.default_procured_share) {
            return Err(IoError::Config(format!("default_procured_share {} outside [0, 1]", self.default_procured_share)));
        }
        if self.state_production_tonnes.is_some_and(|t| !(t.is_finite() && t >= 0.0)) {
            return Err(IoError::Config("state_production_tonnes must be non-negative".into()));
        }
        if !self.undernourishment.spike_gain.is_finite() {
            return Err(IoError::Config("spike_gain must be finite".into()));
        }
        Ok(())
    }
}

fn json_error(path: &Path, e: &serde_json::Error) -> IoError {
    IoError::Parse { file: file_label(path), line: e.line() as u64, column: e.column(), message: e.to_string() }
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| json_error(path, &e))
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, IoError> {
    load_json(path)
}

/// Reader over a headed CSV file that reports 1-based line and column numbers.
struct Table {
    file: String,
    header: Vec<String>,
    records: Vec<csv::StringRecord>,
}

impl Table {
    fn open(path: &Path, expected: &[&str]) -> Result<Self, IoError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let file = file_label(path);
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| csv_error(&file, &e))?
            .iter()
            .map(str::to_string)
            .collect();
        for (i, name) in expected.iter().enumerate() {
            if header.get(i).map(String::as_str) != Some(*name) {
                return Err(IoError::Parse {
                    file,
                    line: 1,
                    column: i + 1,
                    message: format!("expected column `{name}`, found `{}`", header.get(i).map_or("", |s| s)),
                });
            }
        }
        let records = reader.records().collect::<Result<Vec<_>, _>>().map_err(|e| csv_error(&file, &e))?;
        Ok(Self { file, header, records })
    }

    fn error(&self, rec: &csv::StringRecord, column: usize, message: String) -> IoError {
        IoError::Parse { file: self.file.clone(), line: line_of(rec), column: column + 1, message }
    }

    fn parse<T: FromStr>(&self, rec: &csv::StringRecord, column: usize) -> Result<T, IoError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = rec.get(column).unwrap_or("");
        raw.parse().map_err(|e| {
            let name = self.header.get(column).map_or("?", String::as_str);
            self.error(rec, column, format!("{name}: cannot parse `{raw}`: {e}"))
        })
    }

    fn optional_f64(&self, rec: &csv::StringRecord, column: usize) -> Result<Option<f64>, IoError> {
        match rec.get(column) {
            None | Some("") => Ok(None),
            Some(_) => self.finite(rec, column).map(Some),
        }
    }

    fn finite(&self, rec: &csv::StringRecord, column: usize) -> Result<f64, IoError> {
        let v: f64 = self.parse(rec, column)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.error(rec, column, format!("{}: value must be finite", self.header[column])))
        }
    }

    fn non_negative(&self, rec: &csv::StringRecord, column: usize) -> Result<f64, IoError> {
        let v = self.finite(rec, column)?;
        if v >= 0.0 {
            Ok(v)
        } else {
            Err(self.error(rec, column, format!("{}: value must be non-negative", self.header[column])))
        }
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn csv_error(file: &str, e: &csv::Error) -> IoError {
    IoError::Parse {
        file: file.to_string(),
        line: e.position().map_or(0, |p| p.line()),
        column: 0,
        message: e.to_string(),
    }
}

pub fn load_districts(path: &Path) -> Result<Vec<DistrictRecord>, IoError> {
    let t = Table::open(path, &["id", "name", "total_pop", "rural_pop", "urban_pop", "avg_family_size"])?;
    t.records
        .iter()
        .map(|r| {
            Ok(DistrictRecord {
                id: DistrictId(t.parse(r, 0)?),
                name: r.get(1).unwrap_or("").to_string(),
                total_population: t.parse(r, 2)?,
                rural_population: t.parse(r, 3)?,
                urban_population: t.parse(r, 4)?,
                avg_family_size: t.finite(r, 5)?,
            })
        })
        .collect()
}

/// Blank cells are missing values.
pub fn load_fractions(path: &Path) -> Result<CensusFractionTable, IoError> {
    let t = Table::open(path, &["id", "rural_aay", "urban_aay", "rural_priority", "urban_priority"])?;
    let rows = t
        .records
        .iter()
        .map(|r| {
            let row = FractionRow {
                district_id: DistrictId(t.parse(r, 0)?),
                rural_aay: t.optional_f64(r, 1)?,
                urban_aay: t.optional_f64(r, 2)?,
                rural_priority: t.optional_f64(r, 3)?,
                urban_priority: t.optional_f64(r, 4)?,
            };
            for (col, v) in [row.rural_aay, row.urban_aay, row.rural_priority, row.urban_priority].into_iter().enumerate() {
                if v.is_some_and(|f| !(0.0..=1.0).contains(&f)) {
                    return Err(t.error(r, col + 1, format!("{}: fraction outside [0, 1]", t.header[col + 1])));
                }
            }
            Ok(row)
        })
        .collect::<Result<_, IoError>>()?;
    Ok(CensusFractionTable { rows })
}

pub fn load_adjacency_pairs(path: &Path) -> Result<Vec<(DistrictId, DistrictId)>, IoError> {
    let t = Table::open(path, &["id", "neighbor_id"])?;
    t.records.iter().map(|r| Ok((DistrictId(t.parse(r, 0)?), DistrictId(t.parse(r, 1)?)))).collect()
}

/// Header `id,<id>,<id>,...`; one row per district. Returns ids in file order.
pub fn load_drive_times(path: &Path) -> Result<(Vec<DistrictId>, Vec<Vec<f64>>), IoError> {
    let t = Table::open(path, &["id"])?;
    let cols: Vec<DistrictId> = t.header[1..]
        .iter()
        .enumerate()
        .map(|(i, h)| {
            h.parse().map(DistrictId).map_err(|_| IoError::Parse {
                file: t.file.clone(),
                line: 1,
                column: i + 2,
                message: format!("column header `{h}` is not a district id"),
            })
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(t.records.len());
    for r in &t.records {
        let id = DistrictId(t.parse(r, 0)?);
        if id != cols.get(rows.len()).copied().unwrap_or(id) {
            return Err(t.error(r, 0, format!("row id {id} does not match column order")));
        }
        rows.push((1..r.len()).map(|c| t.finite(r, c)).collect::<Result<Vec<f64>, _>>()?);
    }
    Ok((cols, rows))
}

pub fn load_state_points(path: &Path) -> Result<Vec<StatePoint>, IoError> {
    let t = Table::open(path, &["state", "ratio", "pct"])?;
    t.records
        .iter()
        .map(|r| Ok(StatePoint { ratio: t.non_negative(r, 1)?, pct_undernourished: t.finite(r, 2)? }))
        .collect()
}

/// `month` is `YYYY-MM`.
pub fn load_storage_truth(path: &Path) -> Result<Vec<MonthlyStorage>, IoError> {
    let t = Table::open(path, &["month", "tonnes"])?;
    t.records
        .iter()
        .map(|r| {
            let raw = r.get(0).unwrap_or("");
            let bad = || t.error(r, 0, format!("month: expected YYYY-MM, found `{raw}`"));
            let (y, m) = raw.split_once('-').ok_or_else(bad)?;
            let year: i32 = y.parse().map_err(|_| bad())?;
            let month: u32 = m.parse().map_err(|_| bad())?;
            if !(1..=12).contains(&month) {
                return Err(bad());
            }
            Ok(MonthlyStorage { year, month, storage_kg: tonnes_to_kg(t.non_negative(r, 1)?) })
        })
        .collect()
}

/// Rows of `(id, tonnes...)` with `width` numeric columns, converted to kg.
fn load_keyed_tonnes(path: &Path, columns: &[&str]) -> Result<Vec<(DistrictId, Vec<f64>)>, IoError> {
    let t = Table::open(path, columns)?;
    t.records
        .iter()
        .map(|r| {
            let values = (1..columns.len()).map(|c| t.non_negative(r, c).map(tonnes_to_kg)).collect::<Result<_, _>>()?;
            Ok((DistrictId(t.parse(r, 0)?), values))
        })
        .collect()
}

pub fn load_yields(path: &Path) -> Result<Vec<(DistrictId, f64)>, IoError> {
    Ok(load_keyed_tonnes(path, &["id", "produced_tonnes"])?.into_iter().map(|(id, v)| (id, v[0])).collect())
}

pub fn load_harvest_history(path: &Path) -> Result<Vec<(DistrictId, HarvestRecord)>, IoError> {
    let rows = load_keyed_tonnes(path, &["id", "last_year_nonwasted_tonnes", "last_year_procured_tonnes"])?;
    Ok(rows
        .into_iter()
        .map(|(id, v)| (id, HarvestRecord { last_year_nonwasted_harvest: v[0], last_year_procured: v[1] }))
        .collect())
}

pub fn load_initial_stock(path: &Path) -> Result<Vec<(DistrictId, f64)>, IoError> {
    Ok(load_keyed_tonnes(path, &["id", "procured_tonnes"])?.into_iter().map(|(id, v)| (id, v[0])).collect())
}

/// All dataset files, aligned to the order of `districts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub districts: Vec<DistrictRecord>,
    pub fractions: CensusFractionTable,
    pub adjacency: AdjacencyList,
    pub drive_times: DriveTimeMatrix,
    pub state_totals: StateTotals,
    pub state_points: Vec<StatePoint>,
    pub storage_truth: Vec<MonthlyStorage>,
    pub produced_kg: Vec<f64>,
    pub harvest_history: Option<Vec<HarvestRecord>>,
    pub initial_procured_kg: Vec<Option<f64>>,
}

fn unknown(report: &mut ValidationReport, index: &DistrictIndex, id: DistrictId, context: &str) -> bool {
    if index.position(id).is_some() {
        return true;
    }
    report.push(Violation::UnknownDistrict { district: id, context: context.to_string() });
    false
}

/// Aligns `(id, value)` rows to district order, reporting unknown ids.
fn align<T: Clone>(
    rows: Vec<(DistrictId, T)>,
    index: &DistrictIndex,
    report: &mut ValidationReport,
    context: &str,
) -> Vec<Option<T>> {
    let mut out = vec![None; index.len()];
    for (id, v) in rows {
        if unknown(report, index, id, context) {
            out[index.position(id).unwrap()] = Some(v);
        }
    }
    out
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset, IoError> {
    let path = |p: &PathBuf| config.resolve(p);
    let districts = load_districts(&path(&config.districts))?;
    let fractions = load_fractions(&path(&config.fractions))?;
    let pairs = load_adjacency_pairs(&path(&config.adjacency))?;
    let (matrix_ids, matrix_rows) = load_drive_times(&path(&config.drive_times))?;
    let state_totals: StateTotals = load_json(&path(&config.state_totals))?;
    let yields = load_yields(&path(&config.yields))?;
    let state_points = config.undernourishment_states.as_ref().map(|p| load_state_points(&path(p))).transpose()?;
    let storage_truth = config.storage_truth.as_ref().map(|p| load_storage_truth(&path(p))).transpose()?;
    let history = config.harvest_history.as_ref().map(|p| load_harvest_history(&path(p))).transpose()?;
    let initial = config.initial_stock.as_ref().map(|p| load_initial_stock(&path(p))).transpose()?;

    let index = DistrictIndex::new(&districts);
    let mut report = ValidationReport::default();

    for row in &fractions.rows {
        unknown(&mut report, &index, row.district_id, "fractions.csv");
    }
    for &(a, b) in &pairs {
        unknown(&mut report, &index, a, "adjacency.csv");
        unknown(&mut report, &index, b, "adjacency.csv");
    }

    // Reorder the matrix to district order.
    let mut drive_times = DriveTimeMatrix::from_fn(districts.len(), |_, _| 0.0);
    let matrix_pos: BTreeMap<DistrictId, usize> = matrix_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let shape_ok = matrix_rows.len() == matrix_ids.len() && matrix_rows.iter().all(|r| r.len() == matrix_ids.len());
    if !shape_ok || matrix_ids.len() != districts.len() {
        report.push(Violation::MatrixShape { expected: districts.len(), actual: matrix_rows.len() });
    } else {
        for &id in &matrix_ids {
            unknown(&mut report, &index, id, "drivetimes.csv");
        }
        for d in &districts {
            if !matrix_pos.contains_key(&d.id) {
                report.push(Violation::UnknownDistrict { district: d.id, context: "missing from drivetimes.csv".into() });
            }
        }
        if report.is_empty() {
            let order: Vec<usize> = districts.iter().map(|d| matrix_pos[&d.id]).collect();
            drive_times = DriveTimeMatrix::from_fn(districts.len(), |i, j| matrix_rows[order[i]][order[j]]);
        }
    }
    // With a bad matrix the zero placeholder still lets district checks run.
    report.extend(crate::domain::validate_dataset(&districts, &drive_times));

    let produced = align(yields, &index, &mut report, "yields.csv");
    for (i, p) in produced.iter().enumerate() {
        if p.is_none() {
            report.push(Violation::UnknownDistrict { district: districts[i].id, context: "missing from yields.csv".into() });
        }
    }
    let harvest_history = history.map(|rows| {
        let aligned = align(rows, &index, &mut report, "harvest_history.csv");
        aligned
            .into_iter()
            .enumerate()
            .map(|(i, h)| {
                let h = h.unwrap_or(HarvestRecord { last_year_nonwasted_harvest: f64::NAN, last_year_procured: 0.0 });
                if !h.is_valid() {
                    report.push(Violation::UnknownDistrict {
                        district: districts[i].id,
                        context: "missing or inconsistent in harvest_history.csv".into(),
                    });
                }
                h
            })
            .collect()
    });
    let initial_procured_kg = initial.map_or_else(
        || vec![None; districts.len()],
        |rows| align(rows, &index, &mut report, "initial_stock.csv"),
    );

    if !report.is_empty() {
        return Err(IoError::ValidationFailed(report));
    }
    let adjacency = AdjacencyList::from_pairs(pairs)?;
    Ok(Dataset {
        produced_kg: produced.into_iter().map(Option::unwrap).collect(),
        districts,
        fractions,
        adjacency,
        drive_times,
        state_totals,
        state_points: state_points.unwrap_or_default(),
        storage_truth: storage_truth.unwrap_or_default(),
        harvest_history,
        initial_procured_kg,
    })
}

/// Dataset plus the derived per-district model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedModel {
    pub inputs: SimulationInputs,
    pub rations: RationPipelineOutput,
    /// Entitlement demand before state scaling, kg/week.
    pub entitlement_demand_kg: Vec<f64>,
    /// State depletion rate used to scale demand, if storage truth was given.
    pub state_depletion_kg_per_week: Option<f64>,
    pub undernourishment_fit: Option<LineFit>,
}

pub fn undernourishment_model(
    settings: &UndernourishmentSettings,
    points: &[StatePoint],
) -> Result<(UndernourishmentModel, Option<LineFit>), IoError> {
    let (slope, intercept, fit) = match (settings.slope, settings.intercept) {
        (Some(s), Some(c)) => (s, c, None),
        (Some(s), None) if points.is_empty() => (s, 0.0, None),
        (Some(s), None) => (s, fit_intercept_for_slope(points, s)?, None),
        (None, pinned) => {
            let fit = fit_undernourishment_line(points, FitMode::WithIntercept)?;
            (fit.slope, pinned.unwrap_or(fit.intercept), Some(fit))
        }
    };
    Ok((UndernourishmentModel { slope, intercept, spike_gain: settings.spike_gain }, fit))
}

pub fn prepare_inputs(dataset: &Dataset, config: &RunConfig) -> Result<PreparedModel, IoError> {
    let districts = &dataset.districts;
    let rations = estimate_cardholders(
        &dataset.fractions,
        districts,
        &dataset.adjacency,
        &dataset.state_totals,
        config.ration,
    )?;
    let entitlement_demand_kg: Vec<f64> = rations.capped.iter().map(|e| weekly_demand(e, &config.entitlement)).collect();
    let state_depletion_kg_per_week = if dataset.storage_truth.is_empty() {
        None
    } else {
        Some(depletion_rate_from_year(&dataset.storage_truth, config.depletion.year, config.depletion.mode)?)
    };
    let weekly_consumption = match state_depletion_kg_per_week {
        Some(rate) => scale_demand_to_state(&entitlement_demand_kg, rate)?,
        None => entitlement_demand_kg.clone(),
    };

    let (model, undernourishment_fit) = undernourishment_model(&config.undernourishment, &dataset.state_points)?;
    let baseline_pct = rations.capped.iter().map(|e| baseline_undernourished(e, &model)).collect::<Result<Vec<_>, _>>()?;
    let cardholder_share = rations
        .capped
        .iter()
        .zip(districts)
        .map(|(e, d)| (e.covered_persons(d.avg_family_size) / d.total_population.max(1) as f64).min(1.0))
        .collect();

    let engine = config.engine_params();
    let harvest_history = dataset.harvest_history.clone().unwrap_or_else(|| {
        dataset
            .produced_kg
            .iter()
            .map(|p| {
                let nonwasted = p * (1.0 - engine.waste_fraction);
                HarvestRecord { last_year_nonwasted_harvest: nonwasted, last_year_procured: nonwasted * config.default_procured_share }
            })
            .collect()
    });

    let inputs = SimulationInputs {
        districts: districts.clone(),
        drive_times: dataset.drive_times.clone(),
        weekly_consumption,
        baseline_pct,
        cardholder_share,
        produced_kg: dataset.produced_kg.clone(),
        harvest_history,
        initial_procured_kg: dataset.initial_procured_kg.clone(),
        engine,
        allocation: config.allocation,
        undernourishment: model,
        state_production_kg: config.state_production_tonnes.map(tonnes_to_kg),
        flood_destroys_farm_storage: config.flood_destroys_farm_storage,
    };
    inputs.check_shape().map_err(|e| IoError::Config(e.to_string()))?;
    Ok(PreparedModel { inputs, rations, entitlement_demand_kg, state_depletion_kg_per_week, undernourishment_fit })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    #[default]
    CsvLong,
    Json,
}

impl FromStr for TraceFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv_long" | "csv" => Ok(TraceFormat::CsvLong),
            "json" => Ok(TraceFormat::Json),
            other => Err(format!("unknown trace format `{other}` (expected csv_long or json)")),
        }
    }
}

impl TraceFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TraceFormat::CsvLong => "csv",
            TraceFormat::Json => "json",
        }
    }
}

/// Long-format CSV: one row per (week, district, metric), weeks outermost,
/// districts in dataset order, metrics in [`Metric::ALL`] order. Values use
/// the shortest decimal that round-trips.
pub fn write_trace_csv<W: Write>(trace: &SimulationTrace, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["week", "district_id", "metric", "value"])?;
    for week in &trace.weeks {
        for (id, cell) in trace.district_ids.iter().zip(&week.districts) {
            for metric in Metric::ALL {
                w.write_record([
                    week.week.to_string(),
                    id.to_string(),
                    metric.name().to_string(),
                    format!("{}", metric.value(cell)),
                ])?;
            }
        }
    }
    w.flush()
}

pub fn write_trace_json<W: Write>(trace: &SimulationTrace, mut out: W) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, trace)?;
    out.write_all(b"\n")
}

pub fn emit_trace(trace: &SimulationTrace, format: TraceFormat, path: &Path) -> Result<(), IoError> {
    let mut buf = Vec::new();
    match format {
        TraceFormat::CsvLong => write_trace_csv(trace, &mut buf),
        TraceFormat::Json => write_trace_json(trace, &mut buf),
    }
    .map_err(io_err(path))?;
    fs::write(path, buf).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub week: u32,
    pub district_id: DistrictId,
    pub metric: Metric,
    pub value: f64,
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>, IoError> {
    let t = Table::open(path, &["week", "district_id", "metric", "value"])?;
    t.records
        .iter()
        .map(|r| {
            let name = r.get(2).unwrap_or("");
            let metric = Metric::from_name(name).ok_or_else(|| t.error(r, 2, format!("unknown metric `{name}`")))?;
            Ok(TraceRow { week: t.parse(r, 0)?, district_id: DistrictId(t.parse(r, 1)?), metric, value: t.parse(r, 3)? })
        })
        .collect()
}

pub fn read_trace_json(path: &Path) -> Result<SimulationTrace, IoError> {
    load_json(path)
}

/// One row per district and stage. Regional columns are blank where the stage
/// has no regional split or the value is missing.
pub fn write_cardholders_csv<W: Write>(output: &RationPipelineOutput, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "district_id",
        "stage",
        "rural_aay",
        "urban_aay",
        "rural_priority",
        "urban_priority",
        "aay_households",
        "priority_persons",
    ])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    let regional = |stage: EstimateStage, est: &RegionalEstimates<Option<f64>>, w: &mut csv::Writer<W>| {
        for (i, id) in est.ids.iter().enumerate() {
            let v = Series::ALL.map(|s| est.series(s)[i]);
            let aay = v[0].zip(v[1]).map(|(a, b)| a + b);
            let pri = v[2].zip(v[3]).map(|(a, b)| a + b);
            w.write_record([
                id.to_string(),
                stage.as_str().to_string(),
                fmt(v[0]),
                fmt(v[1]),
                fmt(v[2]),
                fmt(v[3]),
                fmt(aay),
                fmt(pri),
            ])?;
        }
        Ok::<_, std::io::Error>(())
    };
    let present = |e: &RegionalEstimates<f64>| RegionalEstimates { ids: e.ids.clone(), values: e.values.clone().map(|v| v.into_iter().map(Some).collect()) };
    regional(EstimateStage::Raw, &output.raw, &mut w)?;
    regional(EstimateStage::Imputed, &present(&output.imputed), &mut w)?;
    regional(EstimateStage::Scaled, &present(&output.scaled_regional), &mut w)?;
    for e in &output.capped {
        write_combined(&mut w, e, &fmt)?;
    }
    w.flush()
}

fn write_combined<W: Write>(w: &mut csv::Writer<W>, e: &CardholderEstimate, fmt: &dyn Fn(Option<f64>) -> String) -> std::io::Result<()> {
    w.write_record([
        e.district_id.to_string(),
        e.stage.as_str().to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        fmt(Some(e.aay_households)),
        fmt(Some(e.priority_persons)),
    ])?;
    Ok(())
}

pub fn write_storage_csv<W: Write>(series: &[MonthlyStorage], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["month", "tonnes"])?;
    for m in series {
        w.write_record([m.label(), format!("{}", kg_to_tonnes(m.storage_kg))])?;
    }
    w.flush()
}

/// Ids named in a flood event that are not in the dataset.
pub fn unknown_event_districts(spec: &ScenarioSpec, districts: &[DistrictRecord]) -> BTreeSet<DistrictId> {
    let known: BTreeSet<DistrictId> = districts.iter().map(|d| d.id).collect();
    crate::scenario::flooded_districts(spec).into_iter().filter(|id| !known.contains(id)).collect()
}
