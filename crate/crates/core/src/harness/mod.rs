//! Configuration, replicated experiments and comparisons.

pub mod config;
pub mod experiment;
pub mod scenario;

pub use config::{Algorithm, DataConfig, ExperimentConfig, Precision, TaskConfig};
pub use experiment::{
    compare, curves, initial_allocations, lr_warnings, run_experiment, run_replica, run_replicas, run_workload, summarize,
    time_gain, ComparisonReport, ExperimentSummary, ReplicaResult, TaskSummary, TimeToTarget,
};
pub use scenario::build_workload;
