//! Configuration, experiment drivers and file outputs for the `twophase`
//! command-line tool.

pub mod commands;
pub mod config;

use thiserror::Error;
use twophase_core::energy::LedgerError;

pub use commands::{
    execute_check_energy, execute_dump_mesh, execute_refine, execute_run, RefineLevel, RefineReport, RunArtifacts,
    Summary,
};
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("solver failure: {0}")]
    Solver(String),
}

impl CliError {
    /// 2 for unusable input, 3 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(_) => 3,
            _ => 2,
        }
    }
}
