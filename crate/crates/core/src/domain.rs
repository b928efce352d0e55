//! Shared value types: districts, cardholder estimates, stocks, prices and the
//! weekly time axis. All masses are kilograms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

pub const KG_PER_TONNE: f64 = 1000.0;
pub const DEFAULT_HORIZON_WEEKS: u32 = 52;

pub fn tonnes_to_kg(tonnes: f64) -> f64 {
    tonnes * KG_PER_TONNE
}

pub fn kg_to_tonnes(kg: f64) -> f64 {
    kg / KG_PER_TONNE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DistrictId(pub u32);

impl fmt::Display for DistrictId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistrictRecord {
    pub id: DistrictId,
    pub name: String,
    pub total_population: u64,
    pub rural_population: u64,
    pub urban_population: u64,
    pub avg_family_size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateStage {
    Raw,
    Imputed,
    Scaled,
    Capped,
}

impl EstimateStage {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimateStage::Raw => "raw",
            EstimateStage::Imputed => "imputed",
            EstimateStage::Scaled => "scaled",
            EstimateStage::Capped => "capped",
        }
    }
}

/// AAY cards are counted in households, Priority cards in persons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CardholderEstimate {
    pub district_id: DistrictId,
    pub aay_households: f64,
    pub priority_persons: f64,
    pub stage: EstimateStage,
}

impl CardholderEstimate {
    /// Persons covered by either card type.
    pub fn covered_persons(&self, avg_family_size: f64) -> f64 {
        self.aay_households * avg_family_size + self.priority_persons
    }
}

/// The nine wheat stocks of a district node plus its weekly consumption rate.
///
/// `produced_wheat` is this season's crop that has not yet been harvested into
/// farm storage. `surplus_wheat` is an earmark on `procured_storage` and is not
/// separate mass; see [`DistrictStockState::mass_kg`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DistrictStockState {
    pub produced_wheat: f64,
    pub farm_storage: f64,
    pub farm_waste: f64,
    pub market_purchased: f64,
    pub procured_storage: f64,
    pub surplus_wheat: f64,
    pub imported_procured: f64,
    pub consumer_purchased: f64,
    pub consumed: f64,
    pub weekly_consumption: f64,
}

impl DistrictStockState {
    /// Physical wheat attributed to the district, terminal stocks included.
    pub fn mass_kg(&self) -> f64 {
        self.produced_wheat
            + self.farm_storage
            + self.farm_waste
            + self.market_purchased
            + self.procured_storage
            + self.imported_procured
            + self.consumer_purchased
            + self.consumed
    }

    pub fn stocks(&self) -> [(&'static str, f64); 9] {
        [
            ("produced_wheat", self.produced_wheat),
            ("farm_storage", self.farm_storage),
            ("farm_waste", self.farm_waste),
            ("market_purchased", self.market_purchased),
            ("procured_storage", self.procured_storage),
            ("surplus_wheat", self.surplus_wheat),
            ("imported_procured", self.imported_procured),
            ("consumer_purchased", self.consumer_purchased),
            ("consumed", self.consumed),
        ]
    }

    pub fn all_non_negative(&self) -> bool {
        self.stocks().iter().all(|(_, v)| *v >= 0.0) && self.weekly_consumption >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceContext {
    pub msp: f64,
    pub msp_last_year: f64,
    pub market_price: f64,
    pub market_price_last_year: f64,
}

impl PriceContext {
    pub fn flat(price: f64) -> Self {
        Self {
            msp: price,
            msp_last_year: price,
            market_price: price,
            market_price_last_year: price,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.msp, self.msp_last_year, self.market_price, self.market_price_last_year]
            .iter()
            .all(|p| p.is_finite() && *p > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarvestRecord {
    pub last_year_nonwasted_harvest: f64,
    pub last_year_procured: f64,
}

impl HarvestRecord {
    pub fn is_valid(&self) -> bool {
        self.last_year_procured >= 0.0
            && self.last_year_procured <= self.last_year_nonwasted_harvest
            && self.last_year_nonwasted_harvest.is_finite()
    }
}

/// Maps week indices to calendar dates. Week 0 starts on `anchor`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    pub anchor: NaiveDate,
    pub horizon: u32,
}

impl Calendar {
    pub fn new(anchor: NaiveDate, horizon: u32) -> Self {
        Self { anchor, horizon }
    }

    /// April 1 of `year`, the spring harvest.
    pub fn default_anchor(year: i32) -> NaiveDate {
        NaiveDate::from_ymd_opt(year, 4, 1).expect("April 1 exists")
    }

    pub fn date_of(&self, week: WeekIndex) -> NaiveDate {
        self.anchor + Days::new(7 * u64::from(week.0))
    }

    pub fn weeks(&self) -> impl Iterator<Item = WeekIndex> {
        (0..self.horizon).map(WeekIndex)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeekIndex(pub u32);

impl fmt::Display for WeekIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Square matrix of drive times in minutes, indexed by district position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveTimeMatrix {
    size: usize,
    minutes: Vec<f64>,
}

impl DriveTimeMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, String> {
        let size = rows.len();
        let mut minutes = Vec::with_capacity(size * size);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != size {
                return Err(format!("row {i} has {} entries, expected {size}", row.len()));
            }
            minutes.extend(row);
        }
        Ok(Self { size, minutes })
    }

    pub fn from_fn(size: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let minutes = (0..size * size).map(|k| f(k / size, k % size)).collect();
        Self { size, minutes }
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.minutes[from * self.size + to]
    }

    pub fn set(&mut self, from: usize, to: usize, value: f64) {
        self.minutes[from * self.size + to] = value;
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.minutes[from * self.size..(from + 1) * self.size]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    PopulationSum { district: DistrictId, total: u64, rural: u64, urban: u64 },
    FamilySize { district: DistrictId, value: f64 },
    DuplicateId { district: DistrictId },
    MatrixShape { expected: usize, actual: usize },
    Asymmetric { row: usize, col: usize, forward: f64, backward: f64 },
    NonZeroDiagonal { index: usize, value: f64 },
    InvalidDistance { row: usize, col: usize, value: f64 },
    UnknownDistrict { district: DistrictId, context: String },
    EmptyDataset,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::PopulationSum { district, total, rural, urban } => write!(
                f,
                "district {district}: total_population {total} != rural_population {rural} + urban_population {urban}"
            ),
            Violation::FamilySize { district, value } => {
                write!(f, "district {district}: avg_family_size {value} must be > 0")
            }
            Violation::DuplicateId { district } => write!(f, "district {district}: duplicate id"),
            Violation::MatrixShape { expected, actual } => {
                write!(f, "drive-time matrix is {actual}x{actual}, expected {expected}x{expected}")
            }
            Violation::Asymmetric { row, col, forward, backward } => write!(
                f,
                "drive-time matrix asymmetric at ({row},{col}): {forward} vs {backward}"
            ),
            Violation::NonZeroDiagonal { index, value } => {
                write!(f, "drive-time matrix diagonal ({index},{index}) is {value}, expected 0")
            }
            Violation::InvalidDistance { row, col, value } => {
                write!(f, "drive-time matrix entry ({row},{col}) = {value} is negative or not finite")
            }
            Violation::UnknownDistrict { district, context } => {
                write!(f, "district {district} referenced in {context} is not in the district table")
            }
            Violation::EmptyDataset => write!(f, "dataset contains no districts"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
    }

    pub fn mentions(&self, district: DistrictId) -> bool {
        self.violations.iter().any(|v| match v {
            Violation::PopulationSum { district: d, .. }
            | Violation::FamilySize { district: d, .. }
            | Violation::DuplicateId { district: d }
            | Violation::UnknownDistrict { district: d, .. } => *d == district,
            _ => false,
        })
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks district and drive-time invariants. The matrix is indexed by the
/// position of each district in `districts`.
pub fn validate_dataset(districts: &[DistrictRecord], matrix: &DriveTimeMatrix) -> ValidationReport {
    let mut report = ValidationReport::default();
    if districts.is_empty() {
        report.push(Violation::EmptyDataset);
    }

    let mut seen = BTreeSet::new();
    for d in districts {
        if !seen.insert(d.id) {
            report.push(Violation::DuplicateId { district: d.id });
        }
        if d.rural_population.checked_add(d.urban_population) != Some(d.total_population) {
            report.push(Violation::PopulationSum {
                district: d.id,
                total: d.total_population,
                rural: d.rural_population,
                urban: d.urban_population,
            });
        }
        if !(d.avg_family_size.is_finite() && d.avg_family_size > 0.0) {
            report.push(Violation::FamilySize { district: d.id, value: d.avg_family_size });
        }
    }

    if matrix.len() != districts.len() {
        report.push(Violation::MatrixShape { expected: districts.len(), actual: matrix.len() });
        return report;
    }
    let n = matrix.len();
    for i in 0..n {
        let diag = matrix.get(i, i);
        if diag != 0.0 {
            report.push(Violation::NonZeroDiagonal { index: i, value: diag });
        }
        for j in 0..n {
            let v = matrix.get(i, j);
            if !v.is_finite() || v < 0.0 {
                report.push(Violation::InvalidDistance { row: i, col: j, value: v });
            }
            if j > i {
                let back = matrix.get(j, i);
                if v != back {
                    report.push(Violation::Asymmetric { row: i, col: j, forward: v, backward: back });
                }
            }
        }
    }
    report
}

/// Position lookup for district ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DistrictIndex {
    positions: BTreeMap<DistrictId, usize>,
}

impl DistrictIndex {
    pub fn new(districts: &[DistrictRecord]) -> Self {
        let positions = districts.iter().enumerate().map(|(i, d)| (d.id, i)).collect();
        Self { positions }
    }

    pub fn position(&self, id: DistrictId) -> Option<usize> {
        self.positions.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}
