//! Command-line driver: configuration, run directories and manifests around
//! the `fade-core` pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use commands::{execute, replay, Input, RunRequest, Subcommand};
pub use config::LabConfig;
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;
