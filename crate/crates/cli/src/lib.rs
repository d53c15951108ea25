//! The reproducibility surface of the workspace: experiment configuration,
//! dataset generation, Monte-Carlo benchmarking, hyperparameter sweeps,
//! FLOPs accounting, and checkpoint handling — everything the `sblu`
//! binary exposes.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod flops;
pub mod sweep;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] sblu_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;
