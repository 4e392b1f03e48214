//! Config-driven experiment runner for the `confes` crate.
//!
//! - [`run`]: train one or more methods over a seed list and write
//!   histories, sieve logs, histograms and snapshots.
//! - [`bounds`]: Monte-Carlo sweep over constructed models, written as
//!   `bounds.csv`.
//! - [`compare`]: aggregate last-window accuracies of finished runs.
//! - [`manifest`]: the `key=value` manifest every run writes, and hash
//!   verification.

use std::path::{Path, PathBuf};

pub mod bounds;
pub mod compare;
pub mod config;
pub mod manifest;
pub mod output;
pub mod run;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Compute(#[from] confes::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Manifest(String),
    #[error("{0}")]
    Incompatible(String),
    #[error("{0}")]
    Verify(String),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_owned(),
            source,
        }
    }

    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Compute(e) => match e {
                confes::Error::InvalidInput(_) => "invalid-input",
                confes::Error::Unsupported(_) => "unsupported",
                confes::Error::Construction(_) => "construction",
                confes::Error::EmptyCleanSet => "empty-clean-set",
                confes::Error::Parse { .. } => "parse",
                confes::Error::Internal(_) => "internal",
                confes::Error::Io { .. } => "io",
            },
            CliError::Io { .. } => "io",
            CliError::Manifest(_) => "manifest",
            CliError::Incompatible(_) => "incompatible",
            CliError::Verify(_) => "verify",
        }
    }

    /// `error: <kind>: <message>` on a single line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error: {}: {msg}", self.kind())
    }
}
