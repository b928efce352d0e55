//! Weekly wheat demand from cardholder counts, and the percent-undernourished
//! proxy built on the AAY to Priority ratio.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::domain::CardholderEstimate;

pub const MONTHS_PER_YEAR: f64 = 12.0;
pub const WEEKS_PER_YEAR: f64 = 52.0;

/// Slope of percent undernourished against the AAY/Priority ratio, fitted
/// across 17 Indian states.
pub const UNDERNOURISHMENT_SLOPE: f64 = 83.67;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemandError {
    #[error("district demands sum to zero; cannot scale to {target} kg/week")]
    ZeroAggregate { target: f64 },
    #[error("priority persons is zero; the AAY/Priority ratio is undefined")]
    DegenerateRatio,
    #[error("regression needs at least two distinct ratios")]
    DegenerateDesign,
    #[error("invalid entitlement policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntitlementPolicy {
    pub aay_kg_per_household_per_month: f64,
    pub priority_kg_per_person_per_month: f64,
}

impl Default for EntitlementPolicy {
    fn default() -> Self {
        Self { aay_kg_per_household_per_month: 35.0, priority_kg_per_person_per_month: 5.0 }
    }
}

impl EntitlementPolicy {
    pub fn validate(&self) -> Result<(), DemandError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.aay_kg_per_household_per_month) && ok(self.priority_kg_per_person_per_month) {
            Ok(())
        } else {
            Err(DemandError::InvalidPolicy(format!("{self:?}")))
        }
    }
}

/// Monthly entitlements spread evenly over 52 weeks.
pub fn weekly_demand(est: &CardholderEstimate, policy: &EntitlementPolicy) -> f64 {
    let monthly = est.aay_households * policy.aay_kg_per_household_per_month
        + est.priority_persons * policy.priority_kg_per_person_per_month;
    monthly * MONTHS_PER_YEAR / WEEKS_PER_YEAR
}

pub fn scale_demand_to_state(demands: &[f64], state_depletion_rate: f64) -> Result<Vec<f64>, DemandError> {
    if demands.iter().sum::<f64>() <= 0.0 {
        return Err(DemandError::ZeroAggregate { target: state_depletion_rate });
    }
    Ok(crate::ration::scale_series(demands, state_depletion_rate).expect("positive aggregate"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UndernourishmentModel {
    pub slope: f64,
    pub intercept: f64,
    pub spike_gain: f64,
}

impl Default for UndernourishmentModel {
    fn default() -> Self {
        Self { slope: UNDERNOURISHMENT_SLOPE, intercept: 0.0, spike_gain: 1.0 }
    }
}

fn clamp_percent(v: f64) -> f64 {
    v.clamp(0.0, 100.0)
}

pub fn aay_priority_ratio(est: &CardholderEstimate) -> Result<f64, DemandError> {
    if est.priority_persons > 0.0 {
        Ok(est.aay_households / est.priority_persons)
    } else {
        Err(DemandError::DegenerateRatio)
    }
}

pub fn baseline_undernourished(est: &CardholderEstimate, model: &UndernourishmentModel) -> Result<f64, DemandError> {
    let ratio = aay_priority_ratio(est)?;
    Ok(clamp_percent(model.intercept + model.slope * ratio))
}

/// Baseline plus the unmet share of subsidized demand, weighted by the share of
/// the population holding cards. Zero demand leaves the baseline untouched.
pub fn dynamic_undernourished(
    baseline: f64,
    unmet_kg: f64,
    demand_kg: f64,
    cardholder_share: f64,
    model: &UndernourishmentModel,
) -> f64 {
    if demand_kg <= 0.0 || unmet_kg <= 0.0 {
        return clamp_percent(baseline);
    }
    let shortfall = (unmet_kg / demand_kg).min(1.0);
    clamp_percent(baseline + model.spike_gain * 100.0 * cardholder_share * shortfall)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatePoint {
    pub ratio: f64,
    pub pct_undernourished: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    #[default]
    WithIntercept,
    ThroughOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
    /// Two-sided p-value of the slope t-statistic; NaN with no residual
    /// degrees of freedom.
    pub slope_p_value: f64,
    pub n: usize,
}

impl LineFit {
    pub fn model(&self, spike_gain: f64) -> UndernourishmentModel {
        UndernourishmentModel { slope: self.slope, intercept: self.intercept, spike_gain }
    }

    /// Two-sided confidence interval for the slope.
    pub fn slope_interval(&self, level: f64, mode: FitMode) -> (f64, f64) {
        let df = residual_df(self.n, mode);
        let t = StudentsT::new(0.0, 1.0, df).map(|d| d.inverse_cdf(0.5 + level / 2.0)).unwrap_or(f64::NAN);
        (self.slope - t * self.slope_std_error, self.slope + t * self.slope_std_error)
    }
}

fn residual_df(n: usize, mode: FitMode) -> f64 {
    match mode {
        FitMode::WithIntercept => n as f64 - 2.0,
        FitMode::ThroughOrigin => n as f64 - 1.0,
    }
}

/// Ordinary least squares of percent undernourished on the ratio.
pub fn fit_undernourishment_line(points: &[StatePoint], mode: FitMode) -> Result<LineFit, DemandError> {
    let n = points.len();
    let first = points.first().ok_or(DemandError::DegenerateDesign)?.ratio;
    let distinct = points.iter().any(|p| p.ratio != first);
    if !distinct && (mode == FitMode::WithIntercept || first == 0.0) {
        return Err(DemandError::DegenerateDesign);
    }
    let nf = n as f64;
    let (mean_x, mean_y) = match mode {
        FitMode::WithIntercept => (
            points.iter().map(|p| p.ratio).sum::<f64>() / nf,
            points.iter().map(|p| p.pct_undernourished).sum::<f64>() / nf,
        ),
        FitMode::ThroughOrigin => (0.0, 0.0),
    };
    let sxx: f64 = points.iter().map(|p| (p.ratio - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.ratio - mean_x) * (p.pct_undernourished - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;

    let sse: f64 = points
        .iter()
        .map(|p| (p.pct_undernourished - intercept - slope * p.ratio).powi(2))
        .sum();
    let df = residual_df(n, mode);
    let (slope_std_error, slope_p_value) = if df > 0.0 {
        let se = (sse / df / sxx).sqrt();
        let p = if se == 0.0 {
            0.0
        } else {
            let t = (slope / se).abs();
            StudentsT::new(0.0, 1.0, df).map(|d| 2.0 * d.sf(t)).unwrap_or(f64::NAN)
        };
        (se, p)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(LineFit { slope, intercept, slope_std_error, slope_p_value, n })
}

/// Least-squares intercept with the slope held fixed.
pub fn fit_intercept_for_slope(points: &[StatePoint], slope: f64) -> Result<f64, DemandError> {
    if points.is_empty() {
        return Err(DemandError::DegenerateDesign);
    }
    let n = points.len() as f64;
    Ok(points.iter().map(|p| p.pct_undernourished - slope * p.ratio).sum::<f64>() / n)
}
