//! Surrogate modelling of reactive flow in porous media: synthetic data
//! generation, field compression, convolutional predictors, autoregressive
//! inference and evaluation metrics.

pub mod checkpoint;
pub mod compression;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod predictor;
pub mod profile;
pub mod report;
pub mod solver;
pub mod training;

pub use error::{Error, Result};
