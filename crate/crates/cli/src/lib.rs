//! Command-line front end for `aging-core`: configuration, the individual
//! stages as subcommands, and the simulation and MLB pipelines.

pub mod args;
pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{Command, PipelineConfig};
pub use error::CliError;
pub use pipeline::{run, MlbReport, Report, SimReport};
