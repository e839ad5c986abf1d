//! Command-line front end for the freespectra toolkit.
//!
//! A run is one TOML config ([`config::RunConfig`]) dispatched to the library
//! ([`runner::run`]): predictions and verification experiments in, a `report.json`
//! plus plot data out. The binary wraps this with flags, exit codes and a one-line
//! summary; everything else is testable as a library.

use std::path::PathBuf;

pub mod config;
pub mod runner;

/// Errors of the front end itself. Library errors pass through unchanged; config
/// errors carry the line/column text of whatever parser found the problem.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Lib(#[from] freespectra::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;
