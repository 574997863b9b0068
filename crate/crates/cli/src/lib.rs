//! Command-line harness around `erspec`: TOML configuration, file-based
//! command composition and hashed run manifests.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::{Protocol, RunConfig, SCHEMA_VERSION};
pub use error::{CliError, ErrorRecord};
pub use output::{Manifest, Outputs};
