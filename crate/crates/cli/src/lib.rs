//! Orchestration for GAN ensemble experiments: configuration, the run
//! manifest and the pipeline stages behind the `ensgan` binary.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

pub use config::{ExperimentConfig, Profile};
pub use error::{CliError, CliResult};
pub use stages::Run;
