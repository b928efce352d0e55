//! Seeded synthetic datasets: the shipped 75-district fixture and small
//! randomized instances for property checks.

use std::fs;
use std::io;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::calibration::MonthlyStorage;
use crate::demand::{StatePoint, UndernourishmentModel, UNDERNOURISHMENT_SLOPE};
use crate::domain::{kg_to_tonnes, tonnes_to_kg, DistrictId, DistrictRecord, DriveTimeMatrix, HarvestRecord, PriceContext, WeekIndex};
use crate::engine::EngineParams;
use crate::ration::{FractionRow, StateTotals};
use crate::scenario::{ScenarioEvent, ScenarioOverrides, ScenarioSpec, SimulationInputs};
use crate::transport::AllocationStrategy;

pub const FIXTURE_SEED: u64 = 2019;
pub const FIXTURE_DISTRICTS: u32 = 75;
pub const STATE_PRODUCTION_TONNES: f64 = 32.6e6;

/// 2019 MSP and market prices with last year's values, rupees per kg.
pub fn fixture_prices() -> PriceContext {
    PriceContext { msp: 18.40, msp_last_year: 17.35, market_price: 20.00, market_price_last_year: 19.50 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub districts: Vec<DistrictRecord>,
    pub fractions: Vec<FractionRow>,
    pub adjacency: Vec<(DistrictId, DistrictId)>,
    pub drive_times: DriveTimeMatrix,
    pub state_totals: StateTotals,
    pub state_points: Vec<(String, StatePoint)>,
    pub storage_truth: Vec<MonthlyStorage>,
    pub yields_tonnes: Vec<f64>,
    pub harvest_history_tonnes: Vec<(f64, f64)>,
    /// Districts whose census fractions push coverage past the population.
    pub overflow_ids: Vec<DistrictId>,
}

const GRID_COLS: usize = 15;

/// Districts on a 15-wide grid, ids from 1. Drive times grow with grid
/// distance; adjacency is the 4-neighborhood.
pub fn fixture(seed: u64) -> Fixture {
    let n = FIXTURE_DISTRICTS as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = |i: usize| ((i % GRID_COLS) as f64, (i / GRID_COLS) as f64);

    let districts: Vec<DistrictRecord> = (0..n)
        .map(|i| {
            let total: u64 = rng.random_range(1_200_000..4_500_000);
            let urban_share: f64 = if i % 11 == 3 { rng.random_range(0.45..0.7) } else { rng.random_range(0.08..0.3) };
            let urban = (total as f64 * urban_share).round() as u64;
            DistrictRecord {
                id: DistrictId(i as u32 + 1),
                name: format!("District {:02}", i + 1),
                total_population: total,
                rural_population: total - urban,
                urban_population: urban,
                avg_family_size: (rng.random_range(4.6..6.4f64) * 100.0).round() / 100.0,
            }
        })
        .collect();

    let overflow_ids: Vec<DistrictId> = [8u32, 33, 61].map(DistrictId).to_vec();
    let mut full: Vec<[f64; 4]> = Vec::with_capacity(n);
    for d in &districts {
        let f = if overflow_ids.contains(&d.id) {
            [0.09, 0.05, 0.9, 0.85]
        } else {
            [
                rng.random_range(0.02..0.06),
                rng.random_range(0.005..0.02),
                rng.random_range(0.5..0.7),
                rng.random_range(0.3..0.5),
            ]
        };
        full.push(f.map(|x: f64| (x * 1e4).round() / 1e4));
    }
    // State totals sit a few percent above the census-implied aggregate.
    let implied = |k: usize, rural: bool| -> f64 {
        districts
            .iter()
            .zip(&full)
            .map(|(d, f)| f[k] * if rural { d.rural_population } else { d.urban_population } as f64)
            .sum()
    };
    let state_totals = StateTotals {
        rural_aay_households: (implied(0, true) * 1.04).round(),
        urban_aay_households: (implied(1, false) * 1.03).round(),
        rural_priority_persons: (implied(2, true) * 1.02).round(),
        urban_priority_persons: (implied(3, false) * 0.97).round(),
    };
    let fractions = districts
        .iter()
        .zip(&full)
        .map(|(d, f)| {
            let mut cell = |v: f64| if overflow_ids.contains(&d.id) || rng.random_bool(0.92) { Some(v) } else { None };
            FractionRow {
                district_id: d.id,
                rural_aay: cell(f[0]),
                urban_aay: cell(f[1]),
                rural_priority: cell(f[2]),
                urban_priority: cell(f[3]),
            }
        })
        .collect();

    let mut adjacency = Vec::new();
    for i in 0..n {
        if (i + 1) % GRID_COLS != 0 && i + 1 < n {
            adjacency.push((districts[i].id, districts[i + 1].id));
        }
        if i + GRID_COLS < n {
            adjacency.push((districts[i].id, districts[i + GRID_COLS].id));
        }
    }

    let mut drive_times = DriveTimeMatrix::from_fn(n, |_, _| 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let ((xi, yi), (xj, yj)) = (pos(i), pos(j));
            let dist = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
            let minutes = (dist * 55.0 * rng.random_range(0.9..1.25f64)).round();
            drive_times.set(i, j, minutes);
            drive_times.set(j, i, minutes);
        }
    }

    let state_points = (0..17)
        .map(|k| {
            let ratio: f64 = rng.random_range(0.02..0.2);
            let noise: f64 = rng.random_range(-1.5..1.5);
            (format!("State {:02}", k + 1), StatePoint {
                ratio: (ratio * 1e4).round() / 1e4,
                pct_undernourished: ((UNDERNOURISHMENT_SLOPE * ratio + noise) * 100.0).round() / 100.0,
            })
        })
        .collect();

    // Western districts farm, the dense eastern ones mostly import.
    let yields_tonnes: Vec<f64> = (0..n)
        .map(|i| {
            let (x, _) = pos(i);
            let base = if i % 11 == 3 || x >= 8.0 { 0.04 } else { 1.6 - x / GRID_COLS as f64 };
            (base * rng.random_range(250_000.0..550_000.0f64)).round()
        })
        .collect();
    let harvest_history_tonnes = yields_tonnes
        .iter()
        .map(|&y| {
            let nonwasted = (y * 0.95 * rng.random_range(0.9..1.1f64)).round();
            (nonwasted, (nonwasted * rng.random_range(0.22..0.34f64)).round())
        })
        .collect();

    Fixture {
        districts,
        fractions,
        adjacency,
        drive_times,
        state_totals,
        state_points,
        storage_truth: storage_truth(&mut rng),
        yields_tonnes,
        harvest_history_tonnes,
        overflow_ids,
    }
}

/// Monthly state storage Jan 2017 to Mar 2020: a spring harvest build-up in
/// April and May, then drawdown.
fn storage_truth(rng: &mut ChaCha8Rng) -> Vec<MonthlyStorage> {
    let weekly_draw = [(2017, 158_000.0), (2018, 166_000.0), (2019, 171_000.0), (2020, 171_000.0)];
    let mut level = 2.4e6;
    let mut out = Vec::new();
    for (year, draw) in weekly_draw {
        let monthly = draw * 52.0 / 12.0;
        for month in 1..=12u32 {
            if year == 2020 && month > 3 {
                break;
            }
            level += match month {
                4 => 4.6e6,
                5 => 3.9e6,
                _ => -monthly * rng.random_range(0.93..1.07f64),
            };
            out.push(MonthlyStorage { year, month, storage_kg: tonnes_to_kg(level.round()) });
        }
    }
    out
}

pub fn baseline_scenario() -> ScenarioSpec {
    ScenarioSpec { name: "baseline".into(), ..ScenarioSpec::baseline(fixture_prices()) }
}

/// 75% of stored wheat destroyed in districts 55 to 75 at week 22.
pub fn flood_scenario() -> ScenarioSpec {
    flood_scenario_for(&(55..=75).map(DistrictId).collect::<Vec<_>>())
}

/// 75% of stored wheat destroyed in `districts` at week 22.
pub fn flood_scenario_for(districts: &[DistrictId]) -> ScenarioSpec {
    ScenarioSpec {
        name: "flood".into(),
        events: vec![ScenarioEvent::Flood { week: 22, district_ids: districts.to_vec(), destroyed_fraction: 0.75 }],
        ..ScenarioSpec::baseline(fixture_prices())
    }
}

fn write_csv<R, I, S>(path: &Path, header: &[&str], rows: R) -> io::Result<()>
where
    R: IntoIterator<Item = I>,
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes the fixture, a run config and the baseline and flood scenarios.
pub fn write_fixture(fx: &Fixture, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir.join("scenarios"))?;
    write_csv(
        &dir.join("districts.csv"),
        &["id", "name", "total_pop", "rural_pop", "urban_pop", "avg_family_size"],
        fx.districts.iter().map(|d| {
            [
                d.id.to_string(),
                d.name.clone(),
                d.total_population.to_string(),
                d.rural_population.to_string(),
                d.urban_population.to_string(),
                format!("{}", d.avg_family_size),
            ]
        }),
    )?;
    write_csv(
        &dir.join("fractions.csv"),
        &["id", "rural_aay", "urban_aay", "rural_priority", "urban_priority"],
        fx.fractions.iter().map(|r| {
            [r.district_id.to_string(), opt(r.rural_aay), opt(r.urban_aay), opt(r.rural_priority), opt(r.urban_priority)]
        }),
    )?;
    write_csv(&dir.join("adjacency.csv"), &["id", "neighbor_id"], fx.adjacency.iter().map(|(a, b)| [a.to_string(), b.to_string()]))?;
    let mut header = vec!["id".to_string()];
    header.extend(fx.districts.iter().map(|d| d.id.to_string()));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &dir.join("drivetimes.csv"),
        &header_refs,
        fx.districts.iter().enumerate().map(|(i, d)| {
            std::iter::once(d.id.to_string()).chain(fx.drive_times.row(i).iter().map(|m| format!("{m}"))).collect::<Vec<_>>()
        }),
    )?;
    fs::write(dir.join("state_totals.json"), serde_json::to_string_pretty(&fx.state_totals)? + "\n")?;
    write_csv(
        &dir.join("undernourishment_states.csv"),
        &["state", "ratio", "pct"],
        fx.state_points.iter().map(|(name, p)| [name.clone(), format!("{}", p.ratio), format!("{}", p.pct_undernourished)]),
    )?;
    write_csv(
        &dir.join("storage_truth.csv"),
        &["month", "tonnes"],
        fx.storage_truth.iter().map(|m| [m.label(), format!("{}", kg_to_tonnes(m.storage_kg))]),
    )?;
    write_csv(
        &dir.join("yields.csv"),
        &["id", "produced_tonnes"],
        fx.districts.iter().zip(&fx.yields_tonnes).map(|(d, y)| [d.id.to_string(), format!("{y}")]),
    )?;
    write_csv(
        &dir.join("harvest_history.csv"),
        &["id", "last_year_nonwasted_tonnes", "last_year_procured_tonnes"],
        fx.districts.iter().zip(&fx.harvest_history_tonnes).map(|(d, (h, p))| [d.id.to_string(), format!("{h}"), format!("{p}")]),
    )?;
    let config = json!({
        "districts": "districts.csv",
        "fractions": "fractions.csv",
        "adjacency": "adjacency.csv",
        "drive_times": "drivetimes.csv",
        "state_totals": "state_totals.json",
        "yields": "yields.csv",
        "undernourishment_states": "undernourishment_states.csv",
        "storage_truth": "storage_truth.csv",
        "harvest_history": "harvest_history.csv",
        "scenario": "scenarios/baseline.json",
        "state_production_tonnes": STATE_PRODUCTION_TONNES,
        "depletion": {"year": 2019, "mode": "prior_year"}
    });
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&config)? + "\n")?;
    for spec in [baseline_scenario(), flood_scenario()] {
        let path = dir.join("scenarios").join(format!("{}.json", spec.name));
        fs::write(path, serde_json::to_string_pretty(&spec)? + "\n")?;
    }
    Ok(())
}

/// A random `n`-district model and scenario with floods and MSP changes, for
/// conservation checks.
pub fn random_instance(seed: u64, n: usize) -> (SimulationInputs, ScenarioSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let districts: Vec<DistrictRecord> = (0..n)
        .map(|i| {
            let rural = rng.random_range(10_000..500_000);
            let urban = rng.random_range(1_000..200_000);
            DistrictRecord {
                id: DistrictId(i as u32 * 3 + 1),
                name: format!("R{i}"),
                total_population: rural + urban,
                rural_population: rural,
                urban_population: urban,
                avg_family_size: rng.random_range(3.0..7.0),
            }
        })
        .collect();
    let mut drive_times = DriveTimeMatrix::from_fn(n, |_, _| 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let m = f64::from(rng.random_range(10u32..600));
            drive_times.set(i, j, m);
            drive_times.set(j, i, m);
        }
    }
    let produced_kg: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(1e5..5e7) })
        .collect();
    let harvest_history = produced_kg
        .iter()
        .map(|&p| {
            let nonwasted = p * rng.random_range(0.5..1.5);
            HarvestRecord { last_year_nonwasted_harvest: nonwasted, last_year_procured: nonwasted * rng.random_range(0.0..1.0) }
        })
        .collect();
    let mut window: Vec<u32> = (0..rng.random_range(1..8)).map(|_| rng.random_range(0..20)).collect();
    window.sort_unstable();
    let engine = EngineParams {
        waste_fraction: rng.random_range(0.0..0.2),
        reserve_weeks: rng.random_range(1..8),
        harvest_window: window.into_iter().map(WeekIndex).collect(),
        transport_latency: rng.random_range(1..4),
        ..EngineParams::default()
    };
    let inputs = SimulationInputs {
        weekly_consumption: (0..n).map(|_| rng.random_range(1e3..5e5)).collect(),
        baseline_pct: (0..n).map(|_| rng.random_range(0.0..30.0)).collect(),
        cardholder_share: (0..n).map(|_| rng.random_range(0.1..1.0)).collect(),
        initial_procured_kg: (0..n).map(|_| rng.random_bool(0.5).then(|| rng.random_range(0.0..2e6))).collect(),
        produced_kg,
        harvest_history,
        drive_times,
        engine,
        allocation: if rng.random_bool(0.5) { AllocationStrategy::NearestPair } else { AllocationStrategy::PerRequester },
        undernourishment: UndernourishmentModel::default(),
        state_production_kg: None,
        flood_destroys_farm_storage: rng.random_bool(0.5),
        districts,
    };
    let ids: Vec<DistrictId> = inputs.districts.iter().map(|d| d.id).collect();
    let mut events = Vec::new();
    for _ in 0..rng.random_range(0..4) {
        let k = rng.random_range(1..=n);
        events.push(ScenarioEvent::Flood {
            week: rng.random_range(0..52),
            district_ids: (0..k).map(|_| ids[rng.random_range(0..n)]).collect(),
            destroyed_fraction: rng.random_range(0.0..=1.0),
        });
    }
    if rng.random_bool(0.5) {
        events.push(ScenarioEvent::MspChange { effective_week: rng.random_range(0..52), new_msp: rng.random_range(10.0..30.0) });
    }
    let prices = PriceContext {
        msp: rng.random_range(10.0..30.0),
        msp_last_year: rng.random_range(10.0..30.0),
        market_price: rng.random_range(10.0..30.0),
        market_price_last_year: rng.random_range(10.0..30.0),
    };
    let spec = ScenarioSpec {
        name: format!("random-{seed}"),
        year: 2019,
        calendar_anchor: NaiveDate::from_ymd_opt(2019, 4, 1),
        horizon_weeks: 52,
        prices,
        events,
        overrides: ScenarioOverrides::default(),
    };
    (inputs, spec)
}

/// Flood toy: `producers` farming districts feed the rest over a line of
/// drive times; every district consumes `weekly` kg.
pub fn flood_toy(n: usize, producers: usize, weekly: f64) -> SimulationInputs {
    let districts: Vec<DistrictRecord> = (0..n)
        .map(|i| DistrictRecord {
            id: DistrictId(i as u32 + 1),
            name: format!("T{}", i + 1),
            total_population: 100_000,
            rural_population: 70_000,
            urban_population: 30_000,
            avg_family_size: 5.0,
        })
        .collect();
    let produced_kg: Vec<f64> = (0..n).map(|i| if i < producers { weekly * 52.0 * n as f64 } else { 0.0 }).collect();
    SimulationInputs {
        drive_times: DriveTimeMatrix::from_fn(n, |i, j| (i as f64 - j as f64).abs() * 40.0),
        weekly_consumption: vec![weekly; n],
        baseline_pct: (0..n).map(|i| 6.0 + (i % 5) as f64).collect(),
        cardholder_share: vec![0.6; n],
        harvest_history: produced_kg
            .iter()
            .map(|&p| HarvestRecord { last_year_nonwasted_harvest: p * 0.95, last_year_procured: p * 0.95 * 0.5 })
            .collect(),
        produced_kg,
        initial_procured_kg: vec![None; n],
        districts,
        engine: EngineParams::default(),
        allocation: AllocationStrategy::NearestPair,
        undernourishment: UndernourishmentModel::default(),
        state_production_kg: None,
        flood_destroys_farm_storage: false,
    }
}
