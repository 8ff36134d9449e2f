//! Multi-scale masked restoration for ECG anomaly detection, with its own
//! reverse-mode autodiff, signal processing and evaluation tooling.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod error;
pub mod model;
pub mod rng;
pub mod scoring;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
