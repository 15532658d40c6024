//! Experiment driver: layered configuration, the budgeted training run,
//! evaluation, metrics/manifest files and the recipe comparison.

mod config;
mod metrics;
mod run;

pub use config::{
    canonical_key, parse_config_text, read_config_file, ConfigLayer, ConfigSources, OptimizerKind, Precision, Recipe,
    RunConfig, IP_LAMBDA, IP_SMOOTHING, KEYS,
};
pub use metrics::{
    checkpoint_path, history_path, manifest_path, metrics_csv, preflight, read_manifest, read_metrics, write_metrics,
    Manifest, MetricsRecord, Seeds, StopReason, WhiteningSummary, CSV_HEADER,
};
pub use run::{
    argmax_lowest, evaluate, params_digest, recipe_matrix, recipe_metrics_path, run, run_training, summary_table,
    RecipeResult, RunOutcome, RunSummary, SummaryRow,
};
