//! Experiment tooling around `rebrac-core`: dataset and checkpoint files,
//! CSV reports, run configuration, a seed-parallel runner and the `rebrac`
//! command-line interface.

pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datafile;
pub mod error;
pub mod refs;
pub mod runner;
pub mod tables;

pub use crate::error::{Error, Result};
