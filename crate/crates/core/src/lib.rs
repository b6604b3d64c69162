//! Reconstruction-based surface anomaly detection.

pub mod checkpoint;
pub mod error;
pub mod evalkit;
pub mod image;
pub mod model;
pub mod nn;
pub mod postprocess;
pub mod preprocess;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
