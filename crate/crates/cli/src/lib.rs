//! Scenario runners behind the `npse` binary.

pub mod config;
pub mod runners;

use std::path::PathBuf;

use npse_core::Termination;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("solver failed: {0}")]
    Solver(npse_core::Error),

    #[error("optimizer stopped without converging ({termination:?}) after {iterations} iterations; best iterate written")]
    NotConverged { iterations: usize, termination: Termination },

    #[error("cannot write {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::NotConverged { .. } => 4,
            CliError::Io { .. } => 1,
        }
    }
}

impl From<npse_core::Error> for CliError {
    fn from(e: npse_core::Error) -> Self {
        use npse_core::Error as E;
        match e {
            E::InvalidInput(_) | E::DimensionMismatch { .. } | E::Parse { .. } | E::MissingDesiredEnergy => {
                CliError::Config(e.to_string())
            }
            E::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            other => CliError::Solver(other),
        }
    }
}
