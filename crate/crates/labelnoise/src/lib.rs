//! Dataset files, checkpoints, reports, plots and the command implementations
//! behind the `labelnoise` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod convert;
pub mod dataset;
pub mod error;
pub mod plot;
pub mod report;

pub use error::{Error, Result};
