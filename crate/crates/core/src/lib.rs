//! Univariate time-series anomaly detection with LSTM forecasters and
//! extreme-value thresholds.

pub mod benchmark;
pub mod data;
pub mod detectors;
pub mod error;
pub mod evaluation;
pub mod evt;
pub mod nn;
pub mod presets;
pub mod stats;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
