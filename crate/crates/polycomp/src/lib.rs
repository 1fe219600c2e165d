//! File formats, run configuration and stage drivers for the policy-space
//! compression pipeline. The numerical work lives in `polycomp-core`.

pub mod config;
pub mod error;
pub mod format;
pub mod heatmap;
pub mod manifest;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{CliError, Result};
