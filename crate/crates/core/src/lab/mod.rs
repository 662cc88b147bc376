//! Experiment harness: configuration, datasets, training loops, evaluation,
//! metrics and checkpoints.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod metrics;
pub mod rng;
pub mod train;

pub use checkpoint::Checkpoint;
pub use compare::{compare, write_comparison, Comparison, RunSummary};
pub use config::{Method, TrainConfig};
pub use dataset::{Dataset, ManifestRecord, TaskRecord};
pub use eval::{
    evaluate, hard_subset, per_digit_analysis, teacher_signal_stats, EvalReport, PerDigitReport,
    TeacherStats,
};
pub use metrics::{read_metrics, write_metrics, MetricsRow};
pub use train::{run_experiment, train, warm_start, RunOptions, TrainState, Trainer};
