//! Experiment runner for acquisition × RS × MS sweeps.
//!
//! A sweep is described by an [`ExperimentConfig`]. [`run_suite`] executes
//! every (condition, repetition) pair, writes one record pair per run under
//! `runs/`, and summarizes them in CSV tables tied together by
//! `manifest.json`. [`verify`] recomputes every summary from the stored files.

pub mod config;
pub mod records;
pub mod suite;
pub mod tables;
pub mod truth;
pub mod verify;

use std::path::PathBuf;

pub use config::{Condition, ExperimentConfig, RunId};
pub use suite::{run_single, run_suite, write_report, SuiteOutcome};
pub use verify::{verify, VerifyReport};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("output directory {0} is not writable: {1}")]
    Unwritable(PathBuf, #[source] std::io::Error),
    #[error("{0}: malformed record: {1}")]
    Record(PathBuf, String),
    #[error(transparent)]
    Core(#[from] hrms_core::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
