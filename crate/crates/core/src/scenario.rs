//! Scenario specification, event application and full multi-week runs.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{dynamic_undernourished, UndernourishmentModel};
use crate::domain::{
    tonnes_to_kg, Calendar, DistrictId, DistrictIndex, DistrictRecord, DistrictStockState, DriveTimeMatrix,
    HarvestRecord, PriceContext, WeekIndex, DEFAULT_HORIZON_WEEKS,
};
use crate::engine::{self, compute_request, compute_surplus, step_district, EngineParams, Eq2Convention, ParamError};
use crate::ration::scale_series;
use crate::transport::{allocate, AllocationInput, AllocationStrategy, Shipment};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("district {district} referenced by {context} is not in the dataset")]
    UnknownDistrict { district: DistrictId, context: String },
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("produced wheat sums to zero; cannot scale to {target_kg} kg")]
    ZeroProduction { target_kg: f64 },
    #[error("inconsistent simulation inputs: {0}")]
    Inputs(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YieldEntry {
    pub district_id: DistrictId,
    pub produced_tonnes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScenarioEvent {
    /// Destroys a fraction of the stored wheat in the listed districts at the
    /// start of `week`.
    Flood { week: u32, district_ids: Vec<DistrictId>, destroyed_fraction: f64 },
    /// Replaces this year's MSP from `effective_week` onward.
    MspChange { effective_week: u32, new_msp: f64 },
    /// Replaces produced wheat before week 0, optionally rescaled to a state total.
    YieldSeed {
        yields: Vec<YieldEntry>,
        #[serde(default)]
        state_total_tonnes: Option<f64>,
    },
}

impl ScenarioEvent {
    fn week(&self) -> Option<u32> {
        match self {
            ScenarioEvent::Flood { week, .. } => Some(*week),
            ScenarioEvent::MspChange { effective_week, .. } => Some(*effective_week),
            ScenarioEvent::YieldSeed { .. } => None,
        }
    }
}

/// Per-scenario replacements for dataset-level parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioOverrides {
    pub waste_fraction: Option<f64>,
    pub reserve_weeks: Option<u32>,
    pub harvest_window: Option<Vec<u32>>,
    pub transport_latency: Option<u32>,
    pub eq2_convention: Option<Eq2Convention>,
    pub allocation: Option<AllocationStrategy>,
    pub flood_destroys_farm_storage: Option<bool>,
    pub spike_gain: Option<f64>,
    pub state_production_tonnes: Option<f64>,
}

fn default_year() -> i32 {
    2019
}

fn default_horizon() -> u32 {
    DEFAULT_HORIZON_WEEKS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_year")]
    pub year: i32,
    /// Date of week 0; April 1 of `year` when absent.
    #[serde(default)]
    pub calendar_anchor: Option<NaiveDate>,
    #[serde(default = "default_horizon")]
    pub horizon_weeks: u32,
    pub prices: PriceContext,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
    #[serde(default)]
    pub overrides: ScenarioOverrides,
}

impl ScenarioSpec {
    pub fn baseline(prices: PriceContext) -> Self {
        Self {
            name: "baseline".into(),
            year: default_year(),
            calendar_anchor: None,
            horizon_weeks: DEFAULT_HORIZON_WEEKS,
            prices,
            events: Vec::new(),
            overrides: ScenarioOverrides::default(),
        }
    }

    pub fn calendar(&self) -> Calendar {
        Calendar::new(self.calendar_anchor.unwrap_or_else(|| Calendar::default_anchor(self.year)), self.horizon_weeks)
    }

    /// Structural checks that need no dataset.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::InvalidSpec(m));
        if !self.prices.is_valid() {
            return invalid(format!("all prices must be positive and finite: {:?}", self.prices));
        }
        for (i, event) in self.events.iter().enumerate() {
            if let Some(week) = event.week() {
                if week >= self.horizon_weeks {
                    return invalid(format!("event {i} at week {week} is outside the {}-week horizon", self.horizon_weeks));
                }
            }
            match event {
                ScenarioEvent::Flood { district_ids, destroyed_fraction, .. } => {
                    if district_ids.is_empty() {
                        return invalid(format!("flood event {i} lists no districts"));
                    }
                    if !(0.0..=1.0).contains(destroyed_fraction) {
                        return invalid(format!("flood event {i}: destroyed_fraction {destroyed_fraction} outside [0, 1]"));
                    }
                }
                ScenarioEvent::MspChange { new_msp, .. } => {
                    if !(new_msp.is_finite() && *new_msp > 0.0) {
                        return invalid(format!("msp change event {i}: new_msp must be positive"));
                    }
                }
                ScenarioEvent::YieldSeed { yields, state_total_tonnes } => {
                    if yields.iter().any(|y| !(y.produced_tonnes.is_finite() && y.produced_tonnes >= 0.0)) {
                        return invalid(format!("yield seed event {i}: produced_tonnes must be non-negative"));
                    }
                    if state_total_tonnes.is_some_and(|t| !(t.is_finite() && t >= 0.0)) {
                        return invalid(format!("yield seed event {i}: state_total_tonnes must be non-negative"));
                    }
                }
            }
        }
        let o = &self.overrides;
        if o.spike_gain.is_some_and(|g| !g.is_finite()) {
            return invalid("spike_gain must be finite".into());
        }
        if o.state_production_tonnes.is_some_and(|t| !(t.is_finite() && t >= 0.0)) {
            return invalid("state_production_tonnes must be non-negative".into());
        }
        self.engine_params(&EngineParams::default()).validate()?;
        Ok(())
    }

    pub fn engine_params(&self, base: &EngineParams) -> EngineParams {
        let o = &self.overrides;
        EngineParams {
            waste_fraction: o.waste_fraction.unwrap_or(base.waste_fraction),
            reserve_weeks: o.reserve_weeks.unwrap_or(base.reserve_weeks),
            harvest_window: o
                .harvest_window
                .as_ref()
                .map(|w| w.iter().copied().map(WeekIndex).collect())
                .unwrap_or_else(|| base.harvest_window.clone()),
            transport_latency: o.transport_latency.unwrap_or(base.transport_latency),
            eq2_convention: o.eq2_convention.unwrap_or(base.eq2_convention),
        }
    }
}

/// Everything a run needs besides the scenario, aligned by district position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationInputs {
    pub districts: Vec<DistrictRecord>,
    pub drive_times: DriveTimeMatrix,
    pub weekly_consumption: Vec<f64>,
    pub baseline_pct: Vec<f64>,
    pub cardholder_share: Vec<f64>,
    pub produced_kg: Vec<f64>,
    pub harvest_history: Vec<HarvestRecord>,
    /// Procured stock at week 0; defaults to the reserve target.
    pub initial_procured_kg: Vec<Option<f64>>,
    pub engine: EngineParams,
    pub allocation: AllocationStrategy,
    pub undernourishment: UndernourishmentModel,
    /// Total this year's production is rescaled to, if set.
    pub state_production_kg: Option<f64>,
    pub flood_destroys_farm_storage: bool,
}

impl SimulationInputs {
    pub fn check_shape(&self) -> Result<(), ScenarioError> {
        let n = self.districts.len();
        let lens = [
            ("weekly_consumption", self.weekly_consumption.len()),
            ("baseline_pct", self.baseline_pct.len()),
            ("cardholder_share", self.cardholder_share.len()),
            ("produced_kg", self.produced_kg.len()),
            ("harvest_history", self.harvest_history.len()),
            ("initial_procured_kg", self.initial_procured_kg.len()),
            ("drive_times", self.drive_times.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(ScenarioError::Inputs(format!("{name} has {len} entries for {n} districts")));
            }
        }
        if let Some(i) = self.harvest_history.iter().position(|h| !h.is_valid()) {
            return Err(ScenarioError::Inputs(format!("harvest history of district {} is invalid", self.districts[i].id)));
        }
        Ok(())
    }

    pub fn ids(&self) -> Vec<DistrictId> {
        self.districts.iter().map(|d| d.id).collect()
    }
}

/// Mutable state carried between weeks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub stocks: Vec<DistrictStockState>,
    pub prices: PriceContext,
    /// Wheat destroyed by events during the current week.
    pub flood_loss: Vec<f64>,
}

/// Applies one event and returns the new state. Yield seeds only touch
/// `produced_wheat`; production rescaling happens in [`run`].
pub fn apply_event(
    state: &RunState,
    event: &ScenarioEvent,
    index: &DistrictIndex,
    flood_destroys_farm_storage: bool,
) -> Result<RunState, ScenarioError> {
    let mut next = state.clone();
    match event {
        ScenarioEvent::Flood { district_ids, destroyed_fraction, .. } => {
            let keep = 1.0 - destroyed_fraction;
            for &id in district_ids {
                let i = position(index, id, "flood event")?;
                let s = &mut next.stocks[i];
                let mut lost = s.procured_storage * destroyed_fraction;
                s.procured_storage *= keep;
                s.surplus_wheat *= keep;
                if flood_destroys_farm_storage {
                    lost += s.farm_storage * destroyed_fraction;
                    s.farm_storage *= keep;
                }
                next.flood_loss[i] += lost;
            }
        }
        ScenarioEvent::MspChange { new_msp, .. } => next.prices.msp = *new_msp,
        ScenarioEvent::YieldSeed { yields, .. } => {
            for y in yields {
                let i = position(index, y.district_id, "yield seed")?;
                next.stocks[i].produced_wheat = tonnes_to_kg(y.produced_tonnes);
            }
        }
    }
    Ok(next)
}

fn position(index: &DistrictIndex, id: DistrictId, context: &str) -> Result<usize, ScenarioError> {
    index
        .position(id)
        .ok_or_else(|| ScenarioError::UnknownDistrict { district: id, context: context.to_string() })
}

/// Proportionally rescales district production to `state_total` kg.
pub fn scale_production(district_yields: &[f64], state_total: f64) -> Result<Vec<f64>, ScenarioError> {
    if district_yields.iter().sum::<f64>() <= 0.0 {
        return Err(ScenarioError::ZeroProduction { target_kg: state_total });
    }
    Ok(scale_series(district_yields, state_total).expect("positive aggregate"))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DistrictWeek {
    pub stocks: DistrictStockState,
    pub request: f64,
    pub offered_surplus: f64,
    pub shipped_in: f64,
    pub shipped_out: f64,
    pub arrivals: f64,
    pub harvest_inflow: f64,
    pub unmet: f64,
    pub flood_loss: f64,
    pub pct_undernourished: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekRecord {
    pub week: WeekIndex,
    pub date: NaiveDate,
    /// Wheat dispatched but not yet arrived at the end of the week.
    pub in_flight_kg: f64,
    pub districts: Vec<DistrictWeek>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub scenario: String,
    pub calendar: Calendar,
    pub district_ids: Vec<DistrictId>,
    /// Stocks after pre-run events (yield seeds, production scaling), before week 0.
    pub initial: Vec<DistrictStockState>,
    pub weeks: Vec<WeekRecord>,
    pub shipments: Vec<Shipment>,
}

/// Trace columns, in output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ProducedWheat,
    FarmStorage,
    FarmWaste,
    MarketPurchased,
    ProcuredStorage,
    SurplusWheat,
    ImportedProcured,
    ConsumerPurchased,
    Consumed,
    WeeklyConsumption,
    Request,
    OfferedSurplus,
    ShippedIn,
    ShippedOut,
    Arrivals,
    HarvestInflow,
    UnmetDemand,
    FloodLoss,
    PctUndernourished,
}

impl Metric {
    pub const ALL: [Metric; 19] = [
        Metric::ProducedWheat,
        Metric::FarmStorage,
        Metric::FarmWaste,
        Metric::MarketPurchased,
        Metric::ProcuredStorage,
        Metric::SurplusWheat,
        Metric::ImportedProcured,
        Metric::ConsumerPurchased,
        Metric::Consumed,
        Metric::WeeklyConsumption,
        Metric::Request,
        Metric::OfferedSurplus,
        Metric::ShippedIn,
        Metric::ShippedOut,
        Metric::Arrivals,
        Metric::HarvestInflow,
        Metric::UnmetDemand,
        Metric::FloodLoss,
        Metric::PctUndernourished,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::ProducedWheat => "produced_wheat",
            Metric::FarmStorage => "farm_storage",
            Metric::FarmWaste => "farm_waste",
            Metric::MarketPurchased => "market_purchased",
            Metric::ProcuredStorage => "procured_storage",
            Metric::SurplusWheat => "surplus_wheat",
            Metric::ImportedProcured => "imported_procured",
            Metric::ConsumerPurchased => "consumer_purchased",
            Metric::Consumed => "consumed",
            Metric::WeeklyConsumption => "weekly_consumption",
            Metric::Request => "request",
            Metric::OfferedSurplus => "offered_surplus",
            Metric::ShippedIn => "shipped_in",
            Metric::ShippedOut => "shipped_out",
            Metric::Arrivals => "arrivals",
            Metric::HarvestInflow => "harvest_inflow",
            Metric::UnmetDemand => "unmet_demand",
            Metric::FloodLoss => "flood_loss",
            Metric::PctUndernourished => "pct_undernourished",
        }
    }

    pub fn from_name(name: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn value(self, cell: &DistrictWeek) -> f64 {
        let s = &cell.stocks;
        match self {
            Metric::ProducedWheat => s.produced_wheat,
            Metric::FarmStorage => s.farm_storage,
            Metric::FarmWaste => s.farm_waste,
            Metric::MarketPurchased => s.market_purchased,
            Metric::ProcuredStorage => s.procured_storage,
            Metric::SurplusWheat => s.surplus_wheat,
            Metric::ImportedProcured => s.imported_procured,
            Metric::ConsumerPurchased => s.consumer_purchased,
            Metric::Consumed => s.consumed,
            Metric::WeeklyConsumption => s.weekly_consumption,
            Metric::Request => cell.request,
            Metric::OfferedSurplus => cell.offered_surplus,
            Metric::ShippedIn => cell.shipped_in,
            Metric::ShippedOut => cell.shipped_out,
            Metric::Arrivals => cell.arrivals,
            Metric::HarvestInflow => cell.harvest_inflow,
            Metric::UnmetDemand => cell.unmet,
            Metric::FloodLoss => cell.flood_loss,
            Metric::PctUndernourished => cell.pct_undernourished,
        }
    }
}

impl SimulationTrace {
    pub fn horizon(&self) -> usize {
        self.weeks.len()
    }

    pub fn series(&self, metric: Metric, district: usize) -> Vec<f64> {
        self.weeks.iter().map(|w| metric.value(&w.districts[district])).collect()
    }

    /// Relative mass-balance residual after each week: initial wheat against
    /// wheat held, in flight and destroyed.
    pub fn mass_balance_residuals(&self) -> Vec<f64> {
        let initial: f64 = self.initial.iter().map(DistrictStockState::mass_kg).sum();
        let mut destroyed = 0.0;
        self.weeks
            .iter()
            .map(|w| {
                destroyed += w.districts.iter().map(|d| d.flood_loss).sum::<f64>();
                let held: f64 = w.districts.iter().map(|d| d.stocks.mass_kg()).sum();
                let residual = initial - (held + w.in_flight_kg + destroyed);
                residual.abs() / initial.max(1.0)
            })
            .collect()
    }
}

/// Runs a scenario to completion. Deterministic: identical inputs give a
/// bit-identical trace.
pub fn run(spec: &ScenarioSpec, inputs: &SimulationInputs) -> Result<SimulationTrace, ScenarioError> {
    spec.validate()?;
    inputs.check_shape()?;
    let params = spec.engine_params(&inputs.engine);
    params.validate()?;
    let allocation = spec.overrides.allocation.unwrap_or(inputs.allocation);
    let flood_farm = spec.overrides.flood_destroys_farm_storage.unwrap_or(inputs.flood_destroys_farm_storage);
    let model = UndernourishmentModel {
        spike_gain: spec.overrides.spike_gain.unwrap_or(inputs.undernourishment.spike_gain),
        ..inputs.undernourishment
    };
    let index = DistrictIndex::new(&inputs.districts);
    let ids = inputs.ids();
    let n = ids.len();
    let calendar = spec.calendar();

    // Dataset problems surface before any simulation work.
    for event in &spec.events {
        if let ScenarioEvent::Flood { district_ids, .. } = event {
            for &id in district_ids {
                position(&index, id, "flood event")?;
            }
        }
    }

    let mut state = RunState {
        stocks: (0..n)
            .map(|i| {
                let weekly = inputs.weekly_consumption[i];
                DistrictStockState {
                    produced_wheat: inputs.produced_kg[i],
                    procured_storage: inputs.initial_procured_kg[i].unwrap_or_else(|| params.reserve_target(weekly)),
                    weekly_consumption: weekly,
                    ..Default::default()
                }
            })
            .collect(),
        prices: spec.prices,
        flood_loss: vec![0.0; n],
    };

    let mut production_target = spec.overrides.state_production_tonnes.map(tonnes_to_kg).or(inputs.state_production_kg);
    for event in &spec.events {
        if let ScenarioEvent::YieldSeed { state_total_tonnes, .. } = event {
            state = apply_event(&state, event, &index, flood_farm)?;
            if let Some(t) = state_total_tonnes {
                production_target = Some(tonnes_to_kg(*t));
            }
        }
    }
    if let Some(target) = production_target {
        let produced: Vec<f64> = state.stocks.iter().map(|s| s.produced_wheat).collect();
        for (s, p) in state.stocks.iter_mut().zip(scale_production(&produced, target)?) {
            s.produced_wheat = p;
        }
    }
    for s in &mut state.stocks {
        s.surplus_wheat = compute_surplus(s, &params);
    }
    let nonwasted: Vec<f64> = state.stocks.iter().map(|s| s.produced_wheat * (1.0 - params.waste_fraction)).collect();

    let initial = state.stocks.clone();
    let mut in_flight: Vec<Shipment> = Vec::new();
    let mut shipments = Vec::new();
    let mut weeks = Vec::with_capacity(spec.horizon_weeks as usize);

    for week in calendar.weeks() {
        state.flood_loss.iter_mut().for_each(|l| *l = 0.0);
        for event in spec.events.iter().filter(|e| e.week() == Some(week.0)) {
            state = apply_event(&state, event, &index, flood_farm)?;
        }

        let mut arrivals = vec![0.0; n];
        in_flight.retain(|s| {
            if s.arrival_week == week {
                arrivals[index.position(s.to).expect("known district")] += s.kg;
                false
            } else {
                true
            }
        });

        let mut cells = vec![DistrictWeek::default(); n];
        for i in 0..n {
            let share = engine::market_share(&inputs.harvest_history[i], &state.prices, params.eq2_convention, nonwasted[i]);
            let (next, delta) = step_district(&state.stocks[i], &params, week, arrivals[i], share);
            state.stocks[i] = next;
            cells[i].arrivals = delta.arrivals;
            cells[i].harvest_inflow = delta.harvest_inflow;
            cells[i].unmet = delta.unmet;
            cells[i].flood_loss = state.flood_loss[i];
        }

        let mut inbound = vec![0.0; n];
        for s in &in_flight {
            inbound[index.position(s.to).expect("known district")] += s.kg;
        }
        let requests: Vec<f64> = (0..n)
            .map(|i| (compute_request(&state.stocks[i], &params) - inbound[i]).max(0.0))
            .collect();
        let surpluses: Vec<f64> = state.stocks.iter().map(|s| compute_surplus(s, &params)).collect();
        let plan = allocate(
            &AllocationInput { ids: &ids, requests: &requests, surpluses: &surpluses, drive_times: &inputs.drive_times },
            week,
            params.transport_latency,
            allocation,
        );
        for s in &plan.shipments {
            let from = index.position(s.from).expect("known district");
            let to = index.position(s.to).expect("known district");
            state.stocks[from].procured_storage -= s.kg;
            cells[from].shipped_out += s.kg;
            cells[to].shipped_in += s.kg;
        }
        in_flight.extend(plan.shipments.iter().copied());
        shipments.extend(plan.shipments);

        for i in 0..n {
            let s = &mut state.stocks[i];
            s.surplus_wheat = compute_surplus(s, &params);
            let cell = &mut cells[i];
            cell.stocks = *s;
            cell.request = requests[i];
            cell.offered_surplus = surpluses[i];
            cell.pct_undernourished = dynamic_undernourished(
                inputs.baseline_pct[i],
                cell.unmet,
                s.weekly_consumption,
                inputs.cardholder_share[i],
                &model,
            );
        }
        weeks.push(WeekRecord {
            week,
            date: calendar.date_of(week),
            in_flight_kg: in_flight.iter().map(|s| s.kg).sum(),
            districts: cells,
        });
    }

    Ok(SimulationTrace { scenario: spec.name.clone(), calendar, district_ids: ids, initial, weeks, shipments })
}

/// District ids named by any flood event.
pub fn flooded_districts(spec: &ScenarioSpec) -> BTreeSet<DistrictId> {
    spec.events
        .iter()
        .filter_map(|e| match e {
            ScenarioEvent::Flood { district_ids, .. } => Some(district_ids.iter().copied()),
            _ => None,
        })
        .flatten()
        .collect()
}
