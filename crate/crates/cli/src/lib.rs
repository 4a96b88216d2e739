//! Experiment harness for fair and private Lagrangian-dual training:
//! layered configuration, k-fold sweeps with JSON/CSV reports, plot series,
//! clip calibration curves and ledger queries.

pub mod config;
pub mod experiment;
pub mod plot;
pub mod tools;

pub use config::{ConfigError, DatasetSource, ExperimentConfig, ModelKind, Settings, SweepAxis};
pub use experiment::{execute, run_experiment, write_reports, ExperimentOutcome, Summary};
pub use plot::{emit_plot_data, FigureKind};
