//! Datasets, metrics and the multi-trial experiment runner.

pub mod dataset;
pub mod metrics;
pub mod trials;

pub use dataset::{compute_truth, write_dataset, DatasetError, DatasetReader, Truth};
pub use metrics::{geometric_mean, median, median_segment_rmse};
pub use trials::{
    aggregate, parse_bench_config, render_tables, reports_from_jsonl, reports_to_jsonl, run_method, run_trial,
    run_trials, segment_len_for, Aggregates, BenchConfig, BenchResults, DatasetEntry, LoadedDataset, Method,
    MethodOutput, MethodSettings, SynthSpec, TrialReport,
};
