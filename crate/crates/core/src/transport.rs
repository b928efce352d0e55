//! Inter-district shipments on the fully connected district graph.

use serde::{Deserialize, Serialize};

use crate::domain::{DistrictId, DriveTimeMatrix, WeekIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationStrategy {
    /// All (supplier, requester) pairs in one ascending drive-time order.
    #[default]
    NearestPair,
    /// Requesters in ascending id order, each filled from its nearest suppliers.
    PerRequester,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shipment {
    pub from: DistrictId,
    pub to: DistrictId,
    pub kg: f64,
    pub dispatch_week: WeekIndex,
    pub arrival_week: WeekIndex,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShipmentPlan {
    pub shipments: Vec<Shipment>,
}

impl ShipmentPlan {
    pub fn total_kg(&self) -> f64 {
        self.shipments.iter().map(|s| s.kg).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.shipments.is_empty()
    }
}

/// Inputs are indexed by district position; `ids` gives the id at each
/// position and drives tie-breaking.
pub struct AllocationInput<'a> {
    pub ids: &'a [DistrictId],
    pub requests: &'a [f64],
    pub surpluses: &'a [f64],
    pub drive_times: &'a DriveTimeMatrix,
}

/// Greedy nearest-first matching of surpluses to requests.
///
/// With [`AllocationStrategy::NearestPair`] every (supplier, requester) pair is
/// visited in ascending drive time, ties broken by (from id, to id), and each
/// pair ships as much as both sides still allow. The plan clears
/// `min(total requested, total surplus)`.
pub fn allocate(
    input: &AllocationInput<'_>,
    week: WeekIndex,
    latency: u32,
    strategy: AllocationStrategy,
) -> ShipmentPlan {
    let n = input.ids.len();
    assert_eq!(input.requests.len(), n);
    assert_eq!(input.surpluses.len(), n);
    let suppliers: Vec<usize> = (0..n).filter(|&i| input.surpluses[i] > 0.0).collect();
    let requesters: Vec<usize> = (0..n).filter(|&i| input.requests[i] > 0.0).collect();
    if suppliers.is_empty() || requesters.is_empty() {
        return ShipmentPlan::default();
    }

    let key = |from: usize, to: usize| (input.drive_times.get(from, to), input.ids[from], input.ids[to]);
    let order: Vec<(usize, usize)> = match strategy {
        AllocationStrategy::NearestPair => {
            let mut pairs: Vec<(usize, usize)> = suppliers
                .iter()
                .flat_map(|&s| requesters.iter().filter(move |&&r| r != s).map(move |&r| (s, r)))
                .collect();
            pairs.sort_by(|a, b| key(a.0, a.1).partial_cmp(&key(b.0, b.1)).expect("finite drive times"));
            pairs
        }
        AllocationStrategy::PerRequester => {
            let mut by_id = requesters.clone();
            by_id.sort_by_key(|&r| input.ids[r]);
            by_id
                .into_iter()
                .flat_map(|r| {
                    let mut sources: Vec<usize> = suppliers.iter().copied().filter(|&s| s != r).collect();
                    sources.sort_by(|&a, &b| key(a, r).partial_cmp(&key(b, r)).expect("finite drive times"));
                    sources.into_iter().map(move |s| (s, r))
                })
                .collect()
        }
    };

    let mut supply = input.surpluses.to_vec();
    let mut demand = input.requests.to_vec();
    let arrival_week = WeekIndex(week.0 + latency);
    let mut shipments = Vec::new();
    for (s, r) in order {
        let kg = supply[s].min(demand[r]);
        if kg <= 0.0 {
            continue;
        }
        supply[s] -= kg;
        demand[r] -= kg;
        shipments.push(Shipment { from: input.ids[s], to: input.ids[r], kg, dispatch_week: week, arrival_week });
    }
    ShipmentPlan { shipments }
}
