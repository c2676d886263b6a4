//! File formats, checkpoints, run configuration and the experiment
//! commands behind the `modalmend` binary.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod format;

pub use config::RunConfig;
pub use error::Failure;
