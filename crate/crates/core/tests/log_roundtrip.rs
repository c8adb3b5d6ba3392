use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use delayfeed::harness::{stream_run, DataSource, ExperimentConfig};
use delayfeed::ingest::{load_log, read_records, records_from_clicks, write_log, LogSchema};
use delayfeed::synthgen::generate;
use delayfeed::types::{DAY, MINUTE};
use delayfeed::{GenConfig, GroundTruthModel, LossKind, WindowConfig};

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("delayfeed-{name}-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn synthetic(n_clicks: usize) -> (GroundTruthModel, Vec<delayfeed::ClickEvent>) {
    let model = GroundTruthModel::desk(8);
    let windows = WindowConfig::new(30 * MINUTE, DAY).unwrap();
    let clicks =
        generate(&GenConfig { n_clicks, seed: 5, clicks_per_hour: 2000.0, model: model.clone(), windows }).unwrap();
    (model, clicks)
}

#[test]
fn synthetic_stream_survives_a_trip_through_disk() {
    let (model, clicks) = synthetic(5000);
    let w = WindowConfig::new(30 * MINUTE, DAY).unwrap();
    let schema = LogSchema::for_context(&model.context, 1 << 12);
    let dir = scratch_dir("roundtrip");
    for name in ["clicks.tsv", "clicks.tsv.gz"] {
        let path = dir.join(name);
        let records = records_from_clicks(&clicks, &model.context);
        write_log(&path, &records, &schema).unwrap();

        let (back, rejected) = read_records(&path, &schema).unwrap();
        assert_eq!(rejected, 0);
        assert_eq!(back, records);

        let loaded = load_log(&path, &schema, 0.5, &w).unwrap();
        assert_eq!(loaded.rejected, 0);
        assert_eq!(loaded.clicks.len(), clicks.len());
        let mut index_of_context = HashMap::new();
        for (a, b) in clicks.iter().zip(&loaded.clicks) {
            assert_eq!(a.click_time, b.click_time);
            assert_eq!(a.conversion_delay, b.conversion_delay);
            let hashed = index_of_context.entry(a.features.0[0].0).or_insert(b.features.0[0].0);
            assert_eq!(*hashed, b.features.0[0].0);
        }
        let mut distinct: Vec<u32> = index_of_context.values().copied().collect();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), 8);
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn a_log_source_runs_end_to_end() {
    let (model, clicks) = synthetic(12_000);
    let schema = LogSchema::for_context(&model.context, 1 << 6);
    let dir = scratch_dir("logrun");
    let path = dir.join("clicks.tsv");
    write_log(&path, &records_from_clicks(&clicks, &model.context), &schema).unwrap();
    let config = ExperimentConfig {
        source: DataSource::Log { path: path.clone(), schema },
        loss: LossKind::Defuse,
        hours: 3,
        ..Default::default()
    };
    let run = stream_run(&config).unwrap();
    assert_eq!(run.report.hours.len(), 2);
    assert!(run.report.aggregate.n_samples > 0);
    assert!(run.report.aggregate.auc.is_some());
    fs::remove_dir_all(&dir).unwrap();
}
