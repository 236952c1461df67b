//! Configuration, presets, orchestration and file formats for
//! `asyncdiff-core` experiments.

use std::path::{Path, PathBuf};

use asyncdiff_core::diffusion::DiffusionError;
use asyncdiff_core::regression::RegressionError;
use asyncdiff_core::sampler::SamplerError;
use asyncdiff_core::theory::TheoryError;
use asyncdiff_core::topology::TopologyError;

pub mod commands;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod output;
pub mod presets;
pub mod svg;

pub use config::{ExperimentConfig, Overrides};
pub use experiment::{prepare, simulate, theory, Prepared};

/// Caps the worker threads used for parallel runs.
pub const THREADS_ENV: &str = "ASYNCDIFF_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown preset {0:?} (expected case1, case2, case3, fedsgd or fedavg)")]
    UnknownPreset(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("dataset file: {0}")]
    Dataset(String),
    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },
    #[error("digest mismatch: {left} != {right}")]
    DigestMismatch { left: String, right: String },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("thread pool: {0}")]
    Threads(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
