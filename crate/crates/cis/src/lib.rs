//! File formats, configuration and command-line drivers around `cis-core`.

pub mod cli;
pub mod codec;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use error::{CliError, FormatError, Result};
