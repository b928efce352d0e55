//! State-level comparison of simulated storage against observed monthly series.

use chrono::Datelike;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{MONTHS_PER_YEAR, WEEKS_PER_YEAR};
use crate::scenario::SimulationTrace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("series lengths differ: model {model}, truth {truth}")]
    LengthMismatch { model: usize, truth: usize },
    #[error("need at least two points, got {0}")]
    TooShort(usize),
    #[error("correlation is undefined for a constant series")]
    ConstantSeries,
    #[error("no storage observations for year {0}")]
    MissingYear(i32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonthlyStorage {
    pub year: i32,
    pub month: u32,
    pub storage_kg: f64,
}

impl MonthlyStorage {
    pub fn label(&self) -> String {
        format!("{:04}-{:02}", self.year, self.month)
    }
}

/// State storage at the last simulated week of each calendar month, in
/// chronological order.
pub fn aggregate_to_state_monthly(trace: &SimulationTrace) -> Vec<MonthlyStorage> {
    let mut out: Vec<MonthlyStorage> = Vec::new();
    for w in &trace.weeks {
        let storage_kg = w.districts.iter().map(|d| d.stocks.procured_storage).sum();
        let (year, month) = (w.date.year(), w.date.month());
        match out.last_mut() {
            Some(last) if last.year == year && last.month == month => last.storage_kg = storage_kg,
            _ => out.push(MonthlyStorage { year, month, storage_kg }),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesComparison {
    pub rmse: f64,
    /// Percent; months with zero truth are skipped. `None` if every month is zero.
    pub mape: Option<f64>,
    /// `None` when either series is constant.
    pub pearson_r: Option<f64>,
}

pub fn compare_series(model: &[f64], truth: &[f64]) -> Result<SeriesComparison, CalibrationError> {
    check_lengths(model, truth)?;
    let n = model.len() as f64;
    let rmse = (model.iter().zip(truth).map(|(m, t)| (m - t).powi(2)).sum::<f64>() / n).sqrt();
    let ape: Vec<f64> = model
        .iter()
        .zip(truth)
        .filter(|(_, t)| **t != 0.0)
        .map(|(m, t)| ((m - t) / t).abs())
        .collect();
    let mape = (!ape.is_empty()).then(|| 100.0 * ape.iter().sum::<f64>() / ape.len() as f64);
    Ok(SeriesComparison { rmse, mape, pearson_r: pearson(model, truth).ok() })
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, CalibrationError> {
    check_lengths(a, b)?;
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(CalibrationError::ConstantSeries);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<(), CalibrationError> {
    if a.len() != b.len() {
        return Err(CalibrationError::LengthMismatch { model: a.len(), truth: b.len() });
    }
    if a.len() < 2 {
        return Err(CalibrationError::TooShort(a.len()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YearMode {
    SameYear,
    PriorYear,
    /// Mean of the per-year rates over the `years` years before the target.
    MultiYearAverage { years: u32 },
}

/// Mean monthly drop over months where state storage strictly decreases,
/// converted to kg/week.
fn year_rate(series: &[MonthlyStorage], year: i32) -> Result<f64, CalibrationError> {
    let mut months: Vec<&MonthlyStorage> = series.iter().filter(|m| m.year == year).collect();
    months.sort_by_key(|m| m.month);
    let drops: Vec<f64> = months
        .windows(2)
        .map(|w| w[0].storage_kg - w[1].storage_kg)
        .filter(|d| *d > 0.0)
        .collect();
    if months.is_empty() {
        return Err(CalibrationError::MissingYear(year));
    }
    if drops.is_empty() {
        return Ok(0.0);
    }
    Ok(drops.iter().sum::<f64>() / drops.len() as f64 * MONTHS_PER_YEAR / WEEKS_PER_YEAR)
}

/// State depletion rate in kg/week for a run targeting `target_year`.
pub fn depletion_rate_from_year(
    series: &[MonthlyStorage],
    target_year: i32,
    mode: YearMode,
) -> Result<f64, CalibrationError> {
    match mode {
        YearMode::SameYear => year_rate(series, target_year),
        YearMode::PriorYear => year_rate(series, target_year - 1),
        YearMode::MultiYearAverage { years } => {
            if years == 0 {
                return Err(CalibrationError::MissingYear(target_year));
            }
            let rates = (1..=years as i32)
                .map(|k| year_rate(series, target_year - k))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(rates.iter().sum::<f64>() / rates.len() as f64)
        }
    }
}
