//! Command-line harness for `projwass`: dataset ingestion, the inference
//! commands, simulation protocols and report emission.

pub mod app;
pub mod error;
pub mod experiments;
pub mod ingest;
pub mod report;

pub use error::{CliError, CliResult};
