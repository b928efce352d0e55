use std::fs;
use std::path::{Path, PathBuf};

use pds_core::domain::{DistrictId, Violation};
use pds_core::io::{self, IoError, RunConfig, TraceFormat};
use pds_core::scenario::{self, Metric, ScenarioSpec};
use pds_core::synthetic;
use pds_core::PriceContext;

fn shipped() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic")
}

fn copy_dataset(to: &Path) {
    for entry in fs::read_dir(shipped()).unwrap() {
        let p = entry.unwrap().path();
        if p.is_file() {
            fs::copy(&p, to.join(p.file_name().unwrap())).unwrap();
        }
    }
}

#[test]
fn shipped_dataset_loads_clean() {
    let config = RunConfig::load(&shipped().join("config.json")).unwrap();
    let dataset = io::load_dataset(&config).unwrap();
    assert_eq!(dataset.districts.len(), 75);
    assert_eq!(dataset.drive_times.len(), 75);
    assert!(dataset.harvest_history.is_some());
    let prepared = io::prepare_inputs(&dataset, &config).unwrap();
    prepared.inputs.check_shape().unwrap();
    assert!(prepared.inputs.weekly_consumption.iter().all(|&c| c > 0.0));
}

#[test]
fn shipped_dataset_matches_generator() {
    let dir = tempfile::tempdir().unwrap();
    synthetic::write_fixture(&synthetic::fixture(synthetic::FIXTURE_SEED), dir.path()).unwrap();
    for name in [
        "districts.csv",
        "fractions.csv",
        "adjacency.csv",
        "drivetimes.csv",
        "state_totals.json",
        "undernourishment_states.csv",
        "storage_truth.csv",
        "yields.csv",
        "harvest_history.csv",
        "config.json",
        "scenarios/baseline.json",
        "scenarios/flood.json",
    ] {
        assert_eq!(fs::read(dir.path().join(name)).unwrap(), fs::read(shipped().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn adjacency_to_unknown_district_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    copy_dataset(dir.path());
    let adj = dir.path().join("adjacency.csv");
    let mut text = fs::read_to_string(&adj).unwrap();
    text.push_str("3,99\n");
    fs::write(&adj, text).unwrap();
    let config = RunConfig::load(&dir.path().join("config.json")).unwrap();
    match io::load_dataset(&config) {
        Err(IoError::ValidationFailed(report)) => {
            assert!(report.mentions(DistrictId(99)), "{report}");
            assert!(report.to_string().contains("99"));
        }
        other => panic!("expected validation failure, got {other:?}"),
    }
}

#[test]
fn population_mismatch_is_reported_with_matrix_problems() {
    let dir = tempfile::tempdir().unwrap();
    copy_dataset(dir.path());
    let path = dir.path().join("districts.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cells: Vec<String> = lines[7].split(',').map(str::to_string).collect();
    cells[2] = (cells[2].parse::<u64>().unwrap() + 1).to_string();
    lines[7] = cells.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let config = RunConfig::load(&dir.path().join("config.json")).unwrap();
    let Err(IoError::ValidationFailed(report)) = io::load_dataset(&config) else { panic!() };
    assert!(report.violations.iter().any(|v| matches!(v, Violation::PopulationSum { district: DistrictId(7), .. })));
}

#[test]
fn malformed_yield_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    copy_dataset(dir.path());
    let path = dir.path().join("yields.csv");
    let text = fs::read_to_string(&path).unwrap().replacen("\n5,", "\n5,x", 1);
    fs::write(&path, text).unwrap();
    let config = RunConfig::load(&dir.path().join("config.json")).unwrap();
    match io::load_dataset(&config) {
        Err(IoError::Parse { file, line, column, .. }) => assert_eq!((file.as_str(), line, column), ("yields.csv", 6, 2)),
        other => panic!("{other:?}"),
    }
}

fn toy_trace(horizon: u32) -> pds_core::SimulationTrace {
    let inputs = synthetic::flood_toy(3, 1, 120.0);
    let spec = ScenarioSpec { horizon_weeks: horizon, ..ScenarioSpec::baseline(PriceContext::flat(18.4)) };
    scenario::run(&spec, &inputs).unwrap()
}

#[test]
fn csv_has_one_row_per_week_district_and_metric() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    io::emit_trace(&toy_trace(4), TraceFormat::CsvLong, &path).unwrap();
    let rows = io::read_trace_csv(&path).unwrap();
    assert_eq!(rows.len(), 12 * Metric::ALL.len());
    for m in Metric::ALL {
        assert_eq!(rows.iter().filter(|r| r.metric == m).count(), 12);
    }
}

#[test]
fn empty_horizon_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    io::emit_trace(&toy_trace(0), TraceFormat::CsvLong, &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "week,district_id,metric,value\n");
}

#[test]
fn emitted_traces_round_trip_exactly() {
    let trace = scenario::run(&synthetic::flood_scenario(), &synthetic::flood_toy(75, 10, 3000.0)).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let json = dir.path().join("t.json");
    io::emit_trace(&trace, TraceFormat::Json, &json).unwrap();
    assert_eq!(io::read_trace_json(&json).unwrap(), trace);

    let csv = dir.path().join("t.csv");
    io::emit_trace(&trace, TraceFormat::CsvLong, &csv).unwrap();
    let rows = io::read_trace_csv(&csv).unwrap();
    let mut it = rows.iter();
    for w in &trace.weeks {
        for (id, cell) in trace.district_ids.iter().zip(&w.districts) {
            for m in Metric::ALL {
                let r = it.next().unwrap();
                assert_eq!((r.week, r.district_id, r.metric), (w.week.0, *id, m));
                assert_eq!(r.value.to_bits(), m.value(cell).to_bits());
            }
        }
    }
    assert!(it.next().is_none());

    let again = dir.path().join("u.csv");
    io::emit_trace(&trace, TraceFormat::CsvLong, &again).unwrap();
    assert_eq!(fs::read(&csv).unwrap(), fs::read(&again).unwrap());
}
