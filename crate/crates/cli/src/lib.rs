//! Command-line driver for conformal OOD detection: configuration loading,
//! data sources, and the `calibrate` / `detect` / `evaluate` / `fdr-sweep` /
//! `pvalue-hist` / `synth` commands.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{Overrides, RunConfig};

use conformal_ood::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl CliError {
    /// 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_io() => 2,
            _ => 1,
        }
    }
}
