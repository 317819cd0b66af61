use std::path::PathBuf;

use rockflow_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{0}")]
    Invalid(String),
    #[error("simulation `{sim_id}`: {message}")]
    Simulation { sim_id: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed JSON in {context}: {source}")]
    Json { context: String, source: serde_json::Error },
    #[error("CFL violation: dt {dt:e} exceeds stable limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },
    #[error("pressure solve did not converge after {iterations} iterations (max divergence {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("no percolating porosity field after {attempts} attempts starting at seed {seed}")]
    NoPercolation { attempts: usize, seed: u64 },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("non-finite prediction at step {step}")]
    NonFinitePrediction { step: usize },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

impl Error {
    pub fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn in_simulation(sim_id: &str, err: Error) -> Self {
        Error::Simulation { sim_id: sim_id.to_string(), message: err.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
