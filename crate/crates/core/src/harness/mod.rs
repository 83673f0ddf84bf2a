//! Evaluation metrics, data generation, experiment presets and reports.

mod experiment;
mod nmse;
pub mod plots;
mod report;
mod series;
mod system;

pub use experiment::{
    offline_quality, predict_filtered, predict_open_loop, run_experiment, train_model,
    ExperimentConfig, ExperimentOutcome, Manifest, OfflineQuality, CORE_PRESETS, PRESETS,
};
pub use nmse::{aggregate, nmse, nmse_terms, select_nodes, NmseNormalisation};
pub use report::{emit_report, evaluate, parse_table, render_table, EvaluationReport, ModelKind, ReportRow};
pub use series::{PredictionSeries, SeriesStd, Variable};
pub use system::{derive_seed, generate_system, DataConfig, GeneratedSystem, SystemKind, SystemSpec};
