//! Std companion of `gsr-core`: interaction-log ingestion, the dataset cache
//! and checkpoint formats, run configuration, reports, parallel evaluation
//! and the command implementations behind the `gsr` binary.

pub mod cache;
pub mod checkpoint;
mod codec;
pub mod commands;
pub mod config;
pub mod history;
pub mod ingest;
pub mod parallel;
pub mod report;

pub use commands::CliError;
pub use config::RunConfig;
