//! Transformer encoder-decoder forecasting with zero-shot and fine-tuning
//! workflows, conformal prediction intervals, classical baselines and a
//! benchmark harness.

pub mod baselines;
pub mod checkpoint;
pub mod conformal;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod pipeline;
pub mod synthetic;
pub mod tensor;
pub mod timeseries;
pub mod training;

pub use error::{Error, ErrorKind, Result};
