//! District-level AAY and Priority cardholder estimation.
//!
//! The pipeline runs in four stages, each of which can be inspected:
//!
//! 1. [`estimate_raw`] multiplies census fractions by rural and urban
//!    populations. Missing fractions stay missing.
//! 2. [`impute_neighbors`] fills gaps with the mean of neighboring districts,
//!    in repeated passes.
//! 3. [`scale_to_state`] rescales each of the four series so it sums to the
//!    state control total, then folds rural and urban together per card type.
//! 4. [`cap_and_redistribute`] clips districts whose covered persons exceed
//!    their population and spreads the clipped cards over the districts that
//!    still have room.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CardholderEstimate, DistrictId, DistrictRecord, EstimateStage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    RuralAay,
    UrbanAay,
    RuralPriority,
    UrbanPriority,
}

impl Series {
    pub const ALL: [Series; 4] =
        [Series::RuralAay, Series::UrbanAay, Series::RuralPriority, Series::UrbanPriority];

    fn index(self) -> usize {
        self as usize
    }

    fn is_rural(self) -> bool {
        matches!(self, Series::RuralAay | Series::RuralPriority)
    }
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Series::RuralAay => "rural_aay",
            Series::UrbanAay => "urban_aay",
            Series::RuralPriority => "rural_priority",
            Series::UrbanPriority => "urban_priority",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RationError {
    #[error("imputation of {series} stalled with districts {districts:?} still missing")]
    NonConvergent { series: Series, districts: Vec<DistrictId> },
    #[error("{series} sums to zero but its control total is {total}")]
    ZeroAggregate { series: Series, total: f64 },
    #[error("{excess} cards cannot be placed without exceeding district populations")]
    Infeasible { excess: f64 },
    #[error("adjacency lists a self-loop on district {0}")]
    SelfLoop(DistrictId),
    #[error("state total {name} is negative or not finite: {value}")]
    InvalidTotal { name: &'static str, value: f64 },
}

/// Census-era card fractions for one district. `None` marks a missing value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionRow {
    pub district_id: DistrictId,
    pub rural_aay: Option<f64>,
    pub urban_aay: Option<f64>,
    pub rural_priority: Option<f64>,
    pub urban_priority: Option<f64>,
}

impl FractionRow {
    pub fn missing(district_id: DistrictId) -> Self {
        Self { district_id, rural_aay: None, urban_aay: None, rural_priority: None, urban_priority: None }
    }

    fn get(&self, series: Series) -> Option<f64> {
        match series {
            Series::RuralAay => self.rural_aay,
            Series::UrbanAay => self.urban_aay,
            Series::RuralPriority => self.rural_priority,
            Series::UrbanPriority => self.urban_priority,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CensusFractionTable {
    pub rows: Vec<FractionRow>,
}

/// Undirected neighbor sets. Every edge is stored in both directions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyList {
    neighbors: BTreeMap<DistrictId, BTreeSet<DistrictId>>,
}

impl AdjacencyList {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (DistrictId, DistrictId)>) -> Result<Self, RationError> {
        let mut neighbors: BTreeMap<DistrictId, BTreeSet<DistrictId>> = BTreeMap::new();
        for (a, b) in pairs {
            if a == b {
                return Err(RationError::SelfLoop(a));
            }
            neighbors.entry(a).or_default().insert(b);
            neighbors.entry(b).or_default().insert(a);
        }
        Ok(Self { neighbors })
    }

    pub fn neighbors(&self, id: DistrictId) -> impl Iterator<Item = DistrictId> + '_ {
        self.neighbors.get(&id).into_iter().flatten().copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = DistrictId> + '_ {
        self.neighbors.keys().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateTotals {
    pub rural_aay_households: f64,
    pub rural_priority_persons: f64,
    pub urban_aay_households: f64,
    pub urban_priority_persons: f64,
}

impl StateTotals {
    fn get(&self, series: Series) -> f64 {
        match series {
            Series::RuralAay => self.rural_aay_households,
            Series::UrbanAay => self.urban_aay_households,
            Series::RuralPriority => self.rural_priority_persons,
            Series::UrbanPriority => self.urban_priority_persons,
        }
    }

    fn validate(&self) -> Result<(), RationError> {
        let named = [
            ("rural_aay_households", self.rural_aay_households),
            ("rural_priority_persons", self.rural_priority_persons),
            ("urban_aay_households", self.urban_aay_households),
            ("urban_priority_persons", self.urban_priority_persons),
        ];
        for (name, value) in named {
            if !(value.is_finite() && value >= 0.0) {
                return Err(RationError::InvalidTotal { name, value });
            }
        }
        Ok(())
    }
}

/// Four per-district series aligned with `ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionalEstimates<T> {
    pub ids: Vec<DistrictId>,
    pub values: [Vec<T>; 4],
}

impl<T> RegionalEstimates<T> {
    pub fn series(&self, series: Series) -> &[T] {
        &self.values[series.index()]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl RegionalEstimates<f64> {
    /// Rural plus urban per card type.
    pub fn combined(&self, stage: EstimateStage) -> Vec<CardholderEstimate> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, &district_id)| CardholderEstimate {
                district_id,
                aay_households: self.values[Series::RuralAay.index()][i]
                    + self.values[Series::UrbanAay.index()][i],
                priority_persons: self.values[Series::RuralPriority.index()][i]
                    + self.values[Series::UrbanPriority.index()][i],
                stage,
            })
            .collect()
    }

    pub fn total(&self, series: Series) -> f64 {
        self.series(series).iter().sum()
    }
}

/// Fraction times the matching rural or urban population. Districts without a
/// fraction row get all-missing values.
pub fn estimate_raw(
    fractions: &CensusFractionTable,
    districts: &[DistrictRecord],
) -> RegionalEstimates<Option<f64>> {
    let by_id: BTreeMap<DistrictId, &FractionRow> =
        fractions.rows.iter().map(|r| (r.district_id, r)).collect();
    let ids: Vec<DistrictId> = districts.iter().map(|d| d.id).collect();
    let values = Series::ALL.map(|series| {
        districts
            .iter()
            .map(|d| {
                let fraction = by_id.get(&d.id).and_then(|r| r.get(series))?;
                let population = if series.is_rural() { d.rural_population } else { d.urban_population };
                Some(fraction * population as f64)
            })
            .collect()
    });
    RegionalEstimates { ids, values }
}

/// Fills missing values with the mean of present neighbor values.
///
/// Districts are visited in ascending id order and a value filled earlier in a
/// pass is visible to later districts in the same pass. Passes repeat until
/// nothing is missing.
pub fn impute_neighbors(
    estimates: &RegionalEstimates<Option<f64>>,
    adjacency: &AdjacencyList,
) -> Result<RegionalEstimates<f64>, RationError> {
    let position: BTreeMap<DistrictId, usize> =
        estimates.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut order: Vec<usize> = (0..estimates.len()).collect();
    order.sort_by_key(|&i| estimates.ids[i]);

    let mut filled: [Vec<f64>; 4] = Default::default();
    for series in Series::ALL {
        let mut values = estimates.values[series.index()].clone();
        loop {
            let mut progressed = false;
            let mut remaining = Vec::new();
            for &i in &order {
                if values[i].is_some() {
                    continue;
                }
                let present: Vec<f64> = adjacency
                    .neighbors(estimates.ids[i])
                    .filter_map(|n| position.get(&n).and_then(|&j| values[j]))
                    .collect();
                if present.is_empty() {
                    remaining.push(estimates.ids[i]);
                } else {
                    values[i] = Some(present.iter().sum::<f64>() / present.len() as f64);
                    progressed = true;
                }
            }
            if remaining.is_empty() {
                break;
            }
            if !progressed {
                return Err(RationError::NonConvergent { series, districts: remaining });
            }
        }
        filled[series.index()] = values.into_iter().map(|v| v.expect("filled")).collect();
    }
    Ok(RegionalEstimates { ids: estimates.ids.clone(), values: filled })
}

/// Rescales series `values` so that it sums to `total`.
pub fn scale_series(values: &[f64], total: f64) -> Option<Vec<f64>> {
    let sum: f64 = values.iter().sum();
    if sum == total {
        return Some(values.to_vec());
    }
    if sum <= 0.0 {
        return if total == 0.0 { Some(values.to_vec()) } else { None };
    }
    let factor = total / sum;
    Some(values.iter().map(|v| v * factor).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleOptions {
    /// Urban series are left unscaled when false.
    pub scale_urban: bool,
}

impl Default for ScaleOptions {
    fn default() -> Self {
        Self { scale_urban: true }
    }
}

pub fn scale_to_state(
    estimates: &RegionalEstimates<f64>,
    totals: &StateTotals,
    options: ScaleOptions,
) -> Result<RegionalEstimates<f64>, RationError> {
    totals.validate()?;
    let mut values = estimates.values.clone();
    for series in Series::ALL {
        if !series.is_rural() && !options.scale_urban {
            continue;
        }
        let total = totals.get(series);
        values[series.index()] = scale_series(estimates.series(series), total)
            .ok_or(RationError::ZeroAggregate { series, total })?;
    }
    Ok(RegionalEstimates { ids: estimates.ids.clone(), values })
}

/// Clips districts whose covered persons exceed their population and spreads
/// the clipped cards evenly over districts that are still below their cap.
///
/// Within an overflowing district AAY and Priority shrink by the same factor.
/// Clipped AAY households and clipped Priority persons are redistributed
/// separately, so both card totals are preserved. A district clipped once sits
/// exactly at its cap and receives nothing afterwards, so the loop ends after
/// at most one round per district.
pub fn cap_and_redistribute(
    estimates: &[CardholderEstimate],
    districts: &[DistrictRecord],
) -> Result<Vec<CardholderEstimate>, RationError> {
    assert_eq!(estimates.len(), districts.len(), "estimates must align with districts");
    let n = districts.len();
    let mut aay: Vec<f64> = estimates.iter().map(|e| e.aay_households).collect();
    let mut pri: Vec<f64> = estimates.iter().map(|e| e.priority_persons).collect();
    let cap: Vec<f64> = districts.iter().map(|d| d.total_population as f64).collect();
    let fam: Vec<f64> = districts.iter().map(|d| d.avg_family_size).collect();
    let covered = |aay: &[f64], pri: &[f64], i: usize| aay[i] * fam[i] + pri[i];

    let mut saturated = vec![false; n];
    for _ in 0..=n {
        let overflowing: Vec<usize> =
            (0..n).filter(|&i| covered(&aay, &pri, i) > cap[i]).collect();
        if overflowing.is_empty() {
            return Ok(finish(estimates, aay, pri));
        }

        let mut removed_aay = 0.0;
        let mut removed_pri = 0.0;
        for &i in &overflowing {
            let factor = cap[i] / covered(&aay, &pri, i);
            let new_aay = aay[i] * factor;
            let mut new_pri = (cap[i] - new_aay * fam[i]).max(0.0);
            while new_aay * fam[i] + new_pri > cap[i] && new_pri > 0.0 {
                new_pri = new_pri.next_down().max(0.0);
            }
            removed_aay += aay[i] - new_aay;
            removed_pri += pri[i] - new_pri;
            aay[i] = new_aay;
            pri[i] = new_pri;
            saturated[i] = true;
        }

        let recipients: Vec<usize> = (0..n)
            .filter(|&i| !saturated[i] && covered(&aay, &pri, i) < cap[i])
            .collect();
        if recipients.is_empty() {
            let excess = removed_aay.max(0.0) + removed_pri.max(0.0);
            return Err(RationError::Infeasible { excess });
        }
        let share_aay = removed_aay / recipients.len() as f64;
        let share_pri = removed_pri / recipients.len() as f64;
        for &i in &recipients {
            aay[i] += share_aay;
            pri[i] += share_pri;
        }
    }
    unreachable!("each round saturates at least one district")
}

fn finish(estimates: &[CardholderEstimate], aay: Vec<f64>, pri: Vec<f64>) -> Vec<CardholderEstimate> {
    estimates
        .iter()
        .zip(aay.into_iter().zip(pri))
        .map(|(e, (aay_households, priority_persons))| CardholderEstimate {
            district_id: e.district_id,
            aay_households,
            priority_persons,
            stage: EstimateStage::Capped,
        })
        .collect()
}

/// Every intermediate stage of the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationPipelineOutput {
    pub raw: RegionalEstimates<Option<f64>>,
    pub imputed: RegionalEstimates<f64>,
    pub scaled_regional: RegionalEstimates<f64>,
    pub scaled: Vec<CardholderEstimate>,
    pub capped: Vec<CardholderEstimate>,
}

pub fn estimate_cardholders(
    fractions: &CensusFractionTable,
    districts: &[DistrictRecord],
    adjacency: &AdjacencyList,
    totals: &StateTotals,
    options: ScaleOptions,
) -> Result<RationPipelineOutput, RationError> {
    let raw = estimate_raw(fractions, districts);
    let imputed = impute_neighbors(&raw, adjacency)?;
    let scaled_regional = scale_to_state(&imputed, totals, options)?;
    let scaled = scaled_regional.combined(EstimateStage::Scaled);
    let capped = cap_and_redistribute(&scaled, districts)?;
    Ok(RationPipelineOutput { raw, imputed, scaled_regional, scaled, capped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn district(id: u32, rural: u64, urban: u64, fam: f64) -> DistrictRecord {
        DistrictRecord {
            id: DistrictId(id),
            name: format!("D{id}"),
            total_population: rural + urban,
            rural_population: rural,
            urban_population: urban,
            avg_family_size: fam,
        }
    }

    fn single(values: Vec<Option<f64>>) -> RegionalEstimates<Option<f64>> {
        let ids = (0..values.len() as u32).map(DistrictId).collect();
        RegionalEstimates { ids, values: [values.clone(), values.clone(), values.clone(), values] }
    }

    fn chain(n: u32) -> AdjacencyList {
        AdjacencyList::from_pairs((1..n).map(|i| (DistrictId(i - 1), DistrictId(i)))).unwrap()
    }

    fn priority_only(values: &[f64]) -> Vec<CardholderEstimate> {
        values
            .iter()
            .enumerate()
            .map(|(i, &p)| CardholderEstimate {
                district_id: DistrictId(i as u32),
                aay_households: 0.0,
                priority_persons: p,
                stage: EstimateStage::Scaled,
            })
            .collect()
    }

    #[test]
    fn raw_is_fraction_times_population() {
        let districts = vec![district(0, 100_000, 5_000, 5.0), district(1, 10, 10, 5.0)];
        let table = CensusFractionTable {
            rows: vec![
                FractionRow {
                    district_id: DistrictId(0),
                    rural_aay: Some(0.05),
                    urban_aay: Some(0.0),
                    rural_priority: None,
                    urban_priority: Some(0.2),
                },
                FractionRow::missing(DistrictId(1)),
            ],
        };
        let raw = estimate_raw(&table, &districts);
        assert_eq!(raw.series(Series::RuralAay), &[Some(5000.0), None]);
        assert_eq!(raw.series(Series::UrbanAay), &[Some(0.0), None]);
        assert_eq!(raw.series(Series::RuralPriority), &[None, None]);
        assert_eq!(raw.series(Series::UrbanPriority), &[Some(1000.0), None]);
    }

    #[test]
    fn missing_value_takes_neighbor_mean() {
        let adjacency = AdjacencyList::from_pairs([
            (DistrictId(0), DistrictId(1)),
            (DistrictId(0), DistrictId(2)),
            (DistrictId(0), DistrictId(3)),
        ])
        .unwrap();
        let out = impute_neighbors(&single(vec![None, Some(10.0), Some(20.0), Some(30.0)]), &adjacency).unwrap();
        assert_eq!(out.series(Series::RuralAay), &[20.0, 10.0, 20.0, 30.0]);
    }

    #[test]
    fn chain_fills_over_two_passes() {
        // A(missing) - B(missing) - C(40): B resolves in pass 1, A in pass 2.
        let out = impute_neighbors(&single(vec![None, None, Some(40.0)]), &chain(3)).unwrap();
        assert_eq!(out.series(Series::UrbanPriority), &[40.0, 40.0, 40.0]);
    }

    #[test]
    fn isolated_missing_component_fails() {
        let adjacency = AdjacencyList::from_pairs([(DistrictId(1), DistrictId(2))]).unwrap();
        let err = impute_neighbors(&single(vec![None, Some(1.0), Some(2.0)]), &adjacency).unwrap_err();
        assert_eq!(
            err,
            RationError::NonConvergent { series: Series::RuralAay, districts: vec![DistrictId(0)] }
        );
    }

    #[test]
    fn self_loops_are_rejected() {
        assert_eq!(
            AdjacencyList::from_pairs([(DistrictId(3), DistrictId(3))]).unwrap_err(),
            RationError::SelfLoop(DistrictId(3))
        );
    }

    #[test]
    fn proportional_scaling() {
        assert_eq!(scale_series(&[10.0, 30.0], 80.0).unwrap(), vec![20.0, 60.0]);
        assert_eq!(scale_series(&[10.0, 30.0], 40.0).unwrap(), vec![10.0, 30.0]);
        assert!(scale_series(&[0.0, 0.0], 50.0).is_none());
        assert_eq!(scale_series(&[0.0, 0.0], 0.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_aggregate_is_an_error() {
        let est = RegionalEstimates {
            ids: vec![DistrictId(0), DistrictId(1)],
            values: [vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]],
        };
        let totals = StateTotals {
            rural_aay_households: 50.0,
            rural_priority_persons: 1.0,
            urban_aay_households: 1.0,
            urban_priority_persons: 1.0,
        };
        assert_eq!(
            scale_to_state(&est, &totals, ScaleOptions::default()).unwrap_err(),
            RationError::ZeroAggregate { series: Series::RuralAay, total: 50.0 }
        );
    }

    #[test]
    fn urban_scaling_can_be_disabled() {
        let est = RegionalEstimates {
            ids: vec![DistrictId(0), DistrictId(1)],
            values: [vec![1.0, 3.0], vec![1.0, 3.0], vec![1.0, 3.0], vec![1.0, 3.0]],
        };
        let totals = StateTotals {
            rural_aay_households: 8.0,
            rural_priority_persons: 8.0,
            urban_aay_households: 8.0,
            urban_priority_persons: 8.0,
        };
        let out = scale_to_state(&est, &totals, ScaleOptions { scale_urban: false }).unwrap();
        assert_eq!(out.series(Series::RuralAay), &[2.0, 6.0]);
        assert_eq!(out.series(Series::UrbanAay), &[1.0, 3.0]);
        let combined = out.combined(EstimateStage::Scaled);
        assert_eq!(combined[1].aay_households, 9.0);
    }

    #[test]
    fn overflow_is_clipped_and_split_evenly() {
        let districts: Vec<_> = (0..3).map(|i| district(i, 100, 0, 1.0)).collect();
        let out = cap_and_redistribute(&priority_only(&[120.0, 50.0, 40.0]), &districts).unwrap();
        let covered: Vec<f64> = out.iter().map(|e| e.covered_persons(1.0)).collect();
        assert_eq!(covered, vec![100.0, 60.0, 50.0]);
        assert_eq!(covered.iter().sum::<f64>(), 210.0);
        assert!(out.iter().all(|e| e.stage == EstimateStage::Capped));
    }

    #[test]
    fn clipping_shrinks_both_card_types_by_the_same_factor() {
        let districts = vec![district(0, 100, 0, 4.0), district(1, 100, 0, 4.0)];
        let input = vec![
            CardholderEstimate {
                district_id: DistrictId(0),
                aay_households: 10.0,
                priority_persons: 160.0,
                stage: EstimateStage::Scaled,
            },
            CardholderEstimate {
                district_id: DistrictId(1),
                aay_households: 0.0,
                priority_persons: 0.0,
                stage: EstimateStage::Scaled,
            },
        ];
        // Covered 40 + 160 = 200 against a cap of 100: halve both.
        let out = cap_and_redistribute(&input, &districts).unwrap();
        assert_eq!(out[0].aay_households, 5.0);
        assert_eq!(out[0].priority_persons, 80.0);
        assert_eq!(out[1].aay_households, 5.0);
        assert_eq!(out[1].priority_persons, 80.0);
    }

    #[test]
    fn no_overflow_is_a_fixpoint() {
        let districts: Vec<_> = (0..3).map(|i| district(i, 100, 0, 1.0)).collect();
        let input = priority_only(&[90.0, 50.0, 40.0]);
        let out = cap_and_redistribute(&input, &districts).unwrap();
        for (a, b) in input.iter().zip(&out) {
            assert_eq!(a.priority_persons, b.priority_persons);
            assert_eq!(a.aay_households, b.aay_households);
        }
    }

    #[test]
    fn too_many_cards_is_infeasible() {
        let districts: Vec<_> = (0..3).map(|i| district(i, 100, 0, 1.0)).collect();
        let err = cap_and_redistribute(&priority_only(&[200.0, 100.0, 100.0]), &districts).unwrap_err();
        assert!(matches!(err, RationError::Infeasible { .. }));
        let err = cap_and_redistribute(&priority_only(&[150.0, 150.0, 100.0]), &districts).unwrap_err();
        assert!(matches!(err, RationError::Infeasible { .. }));
    }

    #[test]
    fn cascading_overflow_settles() {
        // The first clip pushes district 1 over its cap as well.
        let districts: Vec<_> = (0..4).map(|i| district(i, 100, 0, 1.0)).collect();
        let out = cap_and_redistribute(&priority_only(&[160.0, 95.0, 10.0, 10.0]), &districts).unwrap();
        let covered: Vec<f64> = out.iter().map(|e| e.priority_persons).collect();
        assert_eq!(covered, vec![100.0, 100.0, 37.5, 37.5]);
    }

    proptest! {
        #[test]
        fn imputation_is_idempotent_on_complete_input(values in prop::collection::vec(0.0f64..1e6, 1..12)) {
            let n = values.len() as u32;
            let est = single(values.iter().copied().map(Some).collect());
            let out = impute_neighbors(&est, &chain(n)).unwrap();
            prop_assert_eq!(out.series(Series::RuralAay), values.as_slice());
        }

        #[test]
        fn capping_conserves_cards_and_respects_caps(
            rows in prop::collection::vec((1u64..10_000, 2.0f64..8.0, 0.0f64..1.0, 0.0f64..1.0), 2..20),
            fill in 0.05f64..0.95,
        ) {
            let districts: Vec<_> = rows.iter().enumerate()
                .map(|(i, &(pop, fam, _, _))| district(i as u32, pop, 0, fam)).collect();
            let total_pop: f64 = districts.iter().map(|d| d.total_population as f64).sum();
            // Random weights, rescaled so covered persons reach `fill` of the state.
            let weights: Vec<(f64, f64)> = rows.iter().map(|&(_, _, a, p)| (a, p + 0.01)).collect();
            let raw_cover: f64 = weights.iter().zip(&districts).map(|((a, p), d)| a * d.avg_family_size + p).sum();
            let k = fill * total_pop / raw_cover;
            let input: Vec<CardholderEstimate> = weights.iter().enumerate().map(|(i, (a, p))| CardholderEstimate {
                district_id: DistrictId(i as u32),
                aay_households: a * k,
                priority_persons: p * k,
                stage: EstimateStage::Scaled,
            }).collect();
            let aay_in: f64 = input.iter().map(|e| e.aay_households).sum();
            let pri_in: f64 = input.iter().map(|e| e.priority_persons).sum();
            match cap_and_redistribute(&input, &districts) {
                Ok(out) => {
                    let aay_out: f64 = out.iter().map(|e| e.aay_households).sum();
                    let pri_out: f64 = out.iter().map(|e| e.priority_persons).sum();
                    prop_assert!((aay_out - aay_in).abs() <= 1e-9 * aay_in.max(1.0));
                    prop_assert!((pri_out - pri_in).abs() <= 1e-9 * pri_in.max(1.0));
                    for (e, d) in out.iter().zip(&districts) {
                        prop_assert!(e.covered_persons(d.avg_family_size) <= d.total_population as f64);
                        prop_assert!(e.aay_households >= 0.0 && e.priority_persons >= 0.0);
                    }
                }
                // Uneven family sizes can make a fill below 100% unplaceable.
                Err(RationError::Infeasible { .. }) => {}
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
