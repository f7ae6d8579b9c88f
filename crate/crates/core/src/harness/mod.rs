//! Experiment orchestration: configuration, training runs, metrics files
//! and hyper-parameter sweeps.

pub mod config;
pub mod metrics;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::{DatasetConfig, ExperimentConfig, ModelConfig, OptimizerConfig, SelectionConfig, SelfKdConfig};
pub use metrics::{EpochRecord, MetricsWriter, RunMetrics, METRICS_HEADER};
pub use report::{extract_curve, write_curve, Curve};
pub use run::{
    evaluate, prepare_data, run_experiment, run_experiment_with, run_single_with, EpochObserver, PreparedData,
    RunOutcome, Slot,
};
pub use sweep::{run_sweep, SweepCell, SweepGrid, SweepSummary, SUMMARY_HEADER};
