//! Batch experiment runner built on `ccagnn`: configuration profiles,
//! per-fold training, result tables and run comparison.

pub mod audio;
pub mod compare;
pub mod config;
pub mod experiment;
pub mod model;

pub use config::{ExperimentConfig, Profile};
pub use experiment::{run_experiment, ExperimentOutcome, FAILURE_MARKER, SUMMARY_FILE};
