//! Experiment driver: synthetic data, configured runs over seeds, result
//! files and strategy comparison tables.

mod audit;
mod compare;
mod experiment;
mod synthetic;

pub use audit::{audit_term, gradient_audit, AUDIT_TERMS};
pub use compare::{compare_strategies, mean_std, percent, summarize, summary_csv, ComparisonTable, StrategySummary};
pub use experiment::{
    load_dataset, load_experiment_data, read_run_records, run_experiment, run_one, ExperimentConfig, ExperimentReport,
    LoadedDataset, Manifest, ManifestEntry, RunRecord, RunStatus,
};
pub use synthetic::{generate_synthetic, SyntheticSpec};
