//! Experiment driver: configuration, data preparation, the round loop,
//! evaluation, metric output and the numerical self-checks.

pub mod checks;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod run;
pub mod state;

pub use checks::{aggcheck, gradcheck, klcheck, CheckReport};
pub use config::{ExperimentConfig, DATA_DIR_ENV};
pub use run::{prepare_data, run_experiment, run_to_dir, uncertainty, PreparedData, RunOutput, Summary};
