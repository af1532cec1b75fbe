//! Experiment runner: config parsing, the multi-round active-learning loop
//! and CSV export.

mod config;
mod export;
mod run;

pub use config::{
    parse_config, AssignmentMode, BudgetConfig, DatasetConfig, ExperimentConfig, IdxPlan, MethodConfig, OutputConfig,
};
pub use export::{bounds_csv, domains_csv, export_outputs, metrics_csv, status_text, BOUNDS_HEADER, METRICS_HEADER};
pub use run::{run_and_export, run_experiment, run_seed, RoundMetrics, RunResults, SeedRun};
