//! Reproducible sweeps over strategies, sample sizes and replicates.

mod config;
mod metrics;
mod plot;
mod run;

pub use config::{ExperimentConfig, Metric, Strategy, BUILTIN_CANONICAL};
pub use metrics::{align_to_truth, metric_l2q, metric_param_error, L2Estimate, ParamFamily, MAX_ALIGN_K};
pub use plot::emit_plots;
pub use run::{
    cell_seed, read_rows, run_experiment, run_strategy, summarize, try_run_strategy, Aggregate, ExperimentReport,
    RowStatus, RunSettings, Slope, StrategyReport, AGGREGATES_FILE, AGGREGATE_METRICS, ROWS_FILE, SCHEMA_VERSION,
    SLOPES_FILE,
};
