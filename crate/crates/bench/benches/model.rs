use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, Criterion};

use pds_core::domain::{DistrictId, WeekIndex};
use pds_core::io::{self, RunConfig};
use pds_core::ration::estimate_cardholders;
use pds_core::scenario;
use pds_core::synthetic;
use pds_core::transport::{allocate, AllocationInput, AllocationStrategy};

fn fixture() -> (io::Dataset, RunConfig) {
    let config = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic/config.json")).unwrap();
    let dataset = io::load_dataset(&config).unwrap();
    (dataset, config)
}

fn benches(c: &mut Criterion) {
    let (dataset, config) = fixture();
    let prepared = io::prepare_inputs(&dataset, &config).unwrap();

    c.bench_function("run 75 districts x 52 weeks, flood", |b| {
        let spec = synthetic::flood_scenario();
        b.iter(|| scenario::run(black_box(&spec), black_box(&prepared.inputs)).unwrap())
    });

    c.bench_function("ration pipeline, 75 districts", |b| {
        b.iter(|| {
            estimate_cardholders(&dataset.fractions, &dataset.districts, &dataset.adjacency, &dataset.state_totals, config.ration)
                .unwrap()
        })
    });

    let ids: Vec<DistrictId> = dataset.districts.iter().map(|d| d.id).collect();
    let requests: Vec<f64> = (0..ids.len()).map(|i| if i % 3 == 0 { 0.0 } else { 1000.0 + i as f64 }).collect();
    let surpluses: Vec<f64> = (0..ids.len()).map(|i| if i % 3 == 0 { 40_000.0 } else { 0.0 }).collect();
    for strategy in [AllocationStrategy::NearestPair, AllocationStrategy::PerRequester] {
        c.bench_function(&format!("allocate 75 districts, {strategy:?}"), |b| {
            let input = AllocationInput { ids: &ids, requests: &requests, surpluses: &surpluses, drive_times: &dataset.drive_times };
            b.iter(|| allocate(black_box(&input), WeekIndex(3), 1, strategy))
        });
    }
}

criterion_group!(model, benches);
criterion_main!(model);
