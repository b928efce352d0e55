//! Per-district weekly stock-and-flow update.
//!
//! Within a week the harvest flows from `produced_wheat` through
//! `farm_storage` and splits three ways: waste, the open market, and
//! government procurement. Consumers draw their weekly ration from
//! `procured_storage`. Wheat shipped in from other districts lands in
//! `imported_procured` and moves into `procured_storage` once the week's
//! consumption has been served, so it backs the following weeks.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DistrictStockState, HarvestRecord, PriceContext, WeekIndex};

/// Direction in which this year's price changes move last year's market
/// quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eq2Convention {
    /// A rising MSP pulls wheat away from the market; a rising market price
    /// pulls wheat toward it.
    #[default]
    AsStatedText,
    /// Multiply by `msp / msp_last_year` and `market_price_last_year / market_price`.
    AsPrintedFormula,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("waste_fraction must lie in [0, 1), got {0}")]
    WasteFraction(f64),
    #[error("harvest_window must not be empty")]
    EmptyHarvestWindow,
    #[error("transport_latency must be at least one week")]
    ZeroLatency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineParams {
    pub waste_fraction: f64,
    pub reserve_weeks: u32,
    pub harvest_window: BTreeSet<WeekIndex>,
    pub transport_latency: u32,
    pub eq2_convention: Eq2Convention,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            waste_fraction: 0.05,
            reserve_weeks: 4,
            harvest_window: (0..5).map(WeekIndex).collect(),
            transport_latency: 1,
            eq2_convention: Eq2Convention::AsStatedText,
        }
    }
}

impl EngineParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        if !(0.0..1.0).contains(&self.waste_fraction) {
            return Err(ParamError::WasteFraction(self.waste_fraction));
        }
        if self.harvest_window.is_empty() {
            return Err(ParamError::EmptyHarvestWindow);
        }
        if self.transport_latency == 0 {
            return Err(ParamError::ZeroLatency);
        }
        Ok(())
    }

    /// Stock a district aims to keep on hand.
    pub fn reserve_target(&self, weekly_consumption: f64) -> f64 {
        f64::from(self.reserve_weeks) * weekly_consumption
    }

    fn harvest_weeks_remaining(&self, week: WeekIndex) -> usize {
        self.harvest_window.range(week..).count()
    }
}

pub fn price_factor(prices: &PriceContext, convention: Eq2Convention) -> f64 {
    let msp_ratio = prices.msp / prices.msp_last_year;
    let market_ratio = prices.market_price_last_year / prices.market_price;
    match convention {
        Eq2Convention::AsPrintedFormula => msp_ratio * market_ratio,
        Eq2Convention::AsStatedText => 1.0 / (msp_ratio * market_ratio),
    }
}

/// Wheat the open market buys this year: last year's market quantity scaled by
/// the price factor and clamped to this year's non-wasted harvest.
pub fn market_split(
    harvest: &HarvestRecord,
    prices: &PriceContext,
    convention: Eq2Convention,
    this_year_nonwasted: f64,
) -> f64 {
    let last_year_market = harvest.last_year_nonwasted_harvest - harvest.last_year_procured;
    (last_year_market * price_factor(prices, convention)).clamp(0.0, this_year_nonwasted.max(0.0))
}

/// Fraction of post-waste harvest inflow that goes to the market.
pub fn market_share(
    harvest: &HarvestRecord,
    prices: &PriceContext,
    convention: Eq2Convention,
    this_year_nonwasted: f64,
) -> f64 {
    if this_year_nonwasted <= 0.0 {
        return 0.0;
    }
    market_split(harvest, prices, convention, this_year_nonwasted) / this_year_nonwasted
}

pub fn compute_request(state: &DistrictStockState, params: &EngineParams) -> f64 {
    (params.reserve_target(state.weekly_consumption) - state.procured_storage).max(0.0)
}

pub fn compute_surplus(state: &DistrictStockState, params: &EngineParams) -> f64 {
    (state.procured_storage - params.reserve_target(state.weekly_consumption)).max(0.0)
}

/// Every flow of one district-week.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDelta {
    pub harvest_inflow: f64,
    pub waste: f64,
    pub to_market: f64,
    pub to_procured: f64,
    pub arrivals: f64,
    pub consumption: f64,
    pub unmet: f64,
}

/// Advances one district by one week and returns the new state.
///
/// `market_share` is the fraction of post-waste harvest inflow sold on the
/// open market (see [`market_share`]).
pub fn step_district(
    state: &DistrictStockState,
    params: &EngineParams,
    week: WeekIndex,
    arrivals_kg: f64,
    market_share: f64,
) -> (DistrictStockState, StepDelta) {
    debug_assert!(arrivals_kg >= 0.0);
    let mut next = *state;
    let mut delta = StepDelta { arrivals: arrivals_kg, ..StepDelta::default() };

    if params.harvest_window.contains(&week) && next.produced_wheat > 0.0 {
        let remaining_weeks = params.harvest_weeks_remaining(week);
        let inflow = if remaining_weeks <= 1 {
            next.produced_wheat
        } else {
            next.produced_wheat / remaining_weeks as f64
        };
        next.produced_wheat = if remaining_weeks <= 1 { 0.0 } else { next.produced_wheat - inflow };

        // The inflow passes through farm storage within the week.
        let waste = params.waste_fraction * inflow;
        let sellable = inflow - waste;
        let to_market = sellable * market_share.clamp(0.0, 1.0);
        let to_procured = sellable - to_market;
        next.farm_waste += waste;
        next.market_purchased += to_market;
        next.procured_storage += to_procured;
        delta.harvest_inflow = inflow;
        delta.waste = waste;
        delta.to_market = to_market;
        delta.to_procured = to_procured;
    }

    next.imported_procured += arrivals_kg;

    let consumption = next.weekly_consumption.min(next.procured_storage);
    next.procured_storage -= consumption;
    next.consumer_purchased += consumption;
    next.consumed += next.consumer_purchased;
    next.consumer_purchased = 0.0;
    delta.consumption = consumption;
    delta.unmet = next.weekly_consumption - consumption;

    next.procured_storage += next.imported_procured;
    next.imported_procured = 0.0;

    next.surplus_wheat = compute_surplus(&next, params);
    (next, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn harvest(h: f64, p: f64) -> HarvestRecord {
        HarvestRecord { last_year_nonwasted_harvest: h, last_year_procured: p }
    }

    fn prices(msp: f64, msp_ly: f64, mp: f64, mp_ly: f64) -> PriceContext {
        PriceContext { msp, msp_last_year: msp_ly, market_price: mp, market_price_last_year: mp_ly }
    }

    fn state(procured: f64, weekly: f64) -> DistrictStockState {
        DistrictStockState { procured_storage: procured, weekly_consumption: weekly, ..Default::default() }
    }

    fn no_harvest() -> EngineParams {
        EngineParams { harvest_window: [WeekIndex(0)].into(), ..EngineParams::default() }
    }

    #[test]
    fn flat_prices_reproduce_last_year_market() {
        let conv = Eq2Convention::AsStatedText;
        assert_eq!(market_split(&harvest(100.0, 40.0), &PriceContext::flat(20.0), conv, 1e9), 60.0);
    }

    #[test]
    fn msp_rise_moves_wheat_into_procurement() {
        let conv = Eq2Convention::AsStatedText;
        let out = market_split(&harvest(100.0, 40.0), &prices(1.1, 1.0, 1.0, 1.0), conv, 1e9);
        assert!((out - 60.0 / 1.1).abs() < 1e-12);
        assert!((out - 54.545).abs() < 1e-3);
        let out = market_split(&harvest(100.0, 40.0), &prices(1.0, 1.0, 1.1, 1.0), conv, 1e9);
        assert!((out - 66.0).abs() < 1e-12);
    }

    #[test]
    fn printed_formula_goes_the_other_way() {
        let conv = Eq2Convention::AsPrintedFormula;
        let out = market_split(&harvest(100.0, 40.0), &prices(1.1, 1.0, 1.0, 1.0), conv, 1e9);
        assert!((out - 66.0).abs() < 1e-12);
    }

    #[test]
    fn market_is_clamped_to_this_years_harvest() {
        let conv = Eq2Convention::AsStatedText;
        assert_eq!(market_split(&harvest(100.0, 0.0), &PriceContext::flat(1.0), conv, 30.0), 30.0);
        assert_eq!(market_share(&harvest(100.0, 0.0), &PriceContext::flat(1.0), conv, 0.0), 0.0);
    }

    #[test]
    fn request_and_surplus() {
        let params = EngineParams::default();
        assert_eq!(compute_request(&state(25.0, 10.0), &params), 15.0);
        assert_eq!(compute_request(&state(100.0, 10.0), &params), 0.0);
        assert_eq!(compute_request(&state(100.0, 0.0), &params), 0.0);
        assert_eq!(compute_surplus(&state(100.0, 10.0), &params), 60.0);
        assert_eq!(compute_surplus(&state(40.0, 10.0), &params), 0.0);
        assert_eq!(compute_surplus(&state(10.0, 10.0), &params), 0.0);
    }

    #[test]
    fn starving_district_is_unchanged() {
        let s = state(0.0, 30.0);
        let (next, delta) = step_district(&s, &no_harvest(), WeekIndex(3), 0.0, 0.5);
        assert_eq!(next, s);
        assert_eq!(delta.unmet, 30.0);
    }

    #[test]
    fn sufficient_stock_is_consumed() {
        let (next, delta) = step_district(&state(100.0, 30.0), &no_harvest(), WeekIndex(3), 0.0, 0.5);
        assert_eq!(next.consumed, 30.0);
        assert_eq!(next.procured_storage, 70.0);
        assert_eq!(next.surplus_wheat, 0.0);
        assert_eq!(delta.unmet, 0.0);
    }

    #[test]
    fn arrivals_back_the_following_week() {
        let (next, delta) = step_district(&state(10.0, 30.0), &no_harvest(), WeekIndex(3), 50.0, 0.0);
        assert_eq!(delta.consumption, 10.0);
        assert_eq!(delta.unmet, 20.0);
        assert_eq!(next.procured_storage, 50.0);
        assert_eq!(next.imported_procured, 0.0);
    }

    #[test]
    fn full_pipeline_on_one_district() {
        // Hand oracle: harvest window {0, 1}, produced 1000, waste 10%,
        // 25% of sellable wheat to market, initial procured 50, weekly 40,
        // 20 kg arriving, reserve 4 weeks.
        //
        // week 0: inflow 1000/2 = 500; waste 50; sellable 450; market 112.5;
        //         procured 50 + 337.5 = 387.5; consume 40 -> 347.5;
        //         + arrivals 20 -> 367.5; surplus 367.5 - 160 = 207.5.
        let params = EngineParams {
            waste_fraction: 0.1,
            harvest_window: [WeekIndex(0), WeekIndex(1)].into(),
            ..EngineParams::default()
        };
        let s = DistrictStockState {
            produced_wheat: 1000.0,
            farm_storage: 7.0,
            procured_storage: 50.0,
            weekly_consumption: 40.0,
            ..Default::default()
        };
        let (next, delta) = step_district(&s, &params, WeekIndex(0), 20.0, 0.25);
        let expected = DistrictStockState {
            produced_wheat: 500.0,
            farm_storage: 7.0,
            farm_waste: 50.0,
            market_purchased: 112.5,
            procured_storage: 367.5,
            surplus_wheat: 207.5,
            imported_procured: 0.0,
            consumer_purchased: 0.0,
            consumed: 40.0,
            weekly_consumption: 40.0,
        };
        assert_eq!(next, expected);
        assert_eq!(delta.harvest_inflow, 500.0);
        assert_eq!(delta.to_procured, 337.5);

        // week 1 takes the rest of the crop; week 2 is outside the window.
        let (next, _) = step_district(&next, &params, WeekIndex(1), 0.0, 0.25);
        assert_eq!(next.produced_wheat, 0.0);
        assert_eq!(next.farm_waste, 100.0);
        assert_eq!(next.market_purchased, 225.0);
        assert_eq!(next.procured_storage, 367.5 + 337.5 - 40.0);
        let (after, delta) = step_district(&next, &params, WeekIndex(2), 0.0, 0.25);
        assert_eq!(delta.harvest_inflow, 0.0);
        assert_eq!(after.procured_storage, next.procured_storage - 40.0);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let p = EngineParams { waste_fraction: 1.0, ..EngineParams::default() };
        assert_eq!(p.validate(), Err(ParamError::WasteFraction(1.0)));
        let p = EngineParams { harvest_window: BTreeSet::new(), ..EngineParams::default() };
        assert_eq!(p.validate(), Err(ParamError::EmptyHarvestWindow));
        let p = EngineParams { transport_latency: 0, ..EngineParams::default() };
        assert_eq!(p.validate(), Err(ParamError::ZeroLatency));
    }

    fn arb_state() -> impl Strategy<Value = DistrictStockState> {
        (0.0f64..1e6, 0.0f64..1e5, 0.0f64..1e6, 0.0f64..1e4).prop_map(|(produced, farm, procured, weekly)| {
            DistrictStockState {
                produced_wheat: produced,
                farm_storage: farm,
                procured_storage: procured,
                weekly_consumption: weekly,
                ..Default::default()
            }
        })
    }

    proptest! {
        #[test]
        fn step_conserves_mass_and_stays_non_negative(
            s in arb_state(),
            week in 0u32..8,
            arrivals in 0.0f64..1e5,
            share in 0.0f64..1.0,
            waste in 0.0f64..0.5,
        ) {
            let params = EngineParams { waste_fraction: waste, ..EngineParams::default() };
            let before = s;
            let (next, delta) = step_district(&s, &params, WeekIndex(week), arrivals, share);
            prop_assert_eq!(s, before);
            prop_assert!(next.all_non_negative());
            prop_assert!(delta.consumption <= s.procured_storage + delta.to_procured + 1e-9);
            let gained = next.mass_kg() - s.mass_kg();
            let scale = s.mass_kg() + arrivals + 1.0;
            prop_assert!((gained - arrivals).abs() <= 1e-9 * scale);
            // Harvest moves wheat between stocks; only arrivals add mass.
            let held_before = s.mass_kg() - s.produced_wheat;
            let held_after = next.mass_kg() - next.produced_wheat;
            prop_assert!((held_after - held_before - delta.harvest_inflow - arrivals).abs() <= 1e-9 * scale);
        }

        #[test]
        fn procured_share_moves_with_prices(
            h in 1.0f64..1e6,
            procured_frac in 0.0f64..0.99,
            msp in 1.0f64..30.0,
            bump in 1.0001f64..1.5,
            mp in 1.0f64..30.0,
        ) {
            let record = harvest(h, h * procured_frac);
            let base = prices(msp, msp, mp, mp);
            let higher_msp = prices(msp * bump, msp, mp, mp);
            let higher_market = prices(msp, msp, mp * bump, mp);
            let conv = Eq2Convention::AsStatedText;
            let cap = h * 2.0;
            let m0 = market_split(&record, &base, conv, cap);
            prop_assert!(market_split(&record, &higher_msp, conv, cap) <= m0);
            prop_assert!(market_split(&record, &higher_market, conv, cap) >= m0);
        }
    }
}
