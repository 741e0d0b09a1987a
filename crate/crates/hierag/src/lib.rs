//! File-system, HTTP and command-line layer over `hierag-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod parallel;
pub mod remote;
pub mod scan;
pub mod store;

pub use commands::run;
pub use error::{CliError, CliResult, ErrorCode};
