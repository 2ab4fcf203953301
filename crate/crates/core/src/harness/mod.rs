//! Three-phase continual-learning experiments: configuration, the training
//! loop with persistence and resume, evaluation metrics and their export.

mod config;
mod metrics;
mod run;

pub use config::{Algorithm, Phase, PhasePlan, RunConfig};
pub use metrics::{
    aggregate, export_metrics, final_rewards, import_metrics, steps_to_return, AggregateReport, AlgorithmSummary,
    EvalPoint, ExportFormat, MetricsReport, RunSummary,
};
pub use run::{run_three_phase, CheckpointLog, Learner, RolloutLog, Run};
