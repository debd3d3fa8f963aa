//! Experiment harness for learned surrogate losses: configuration, the
//! synthetic and toy classification studies, sweeps, and the gradient
//! check suite. The `surrogate` binary is a thin argument parser over
//! [`commands`].

pub mod checks;
pub mod classification;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod sweep;
pub mod synthetic;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
