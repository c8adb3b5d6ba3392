//! Experiment driver: pretraining with leak prevention, hour-by-hour
//! streaming training and evaluation, parallel grids and comparison tables.

mod config;
mod stream;
mod trainer;

pub use config::{load_dataset, DataSource, Dataset, ExperimentConfig};
pub use stream::{
    compare_runs, evaluate_clicks, grid_configs, read_report, report_json, run_grid, split, split_and_pretrain,
    stream_run, stream_run_on, write_comparison_csv, write_run, ComparisonRow, HourReport, Split, StreamReport,
    StreamRun,
};
pub use trainer::{leak_adjusted, pretrain_label, CvrModel, IngestionCounts, Models, Trainer};
