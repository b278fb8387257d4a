//! Solver backend, configuration, simulation and result documents for the
//! `shotgun` command-line tool.

pub mod backend;
pub mod config;
mod error;
pub mod result;
pub mod run;
pub mod simulate;

pub use backend::{ClarabelSolver, Rayon};
pub use config::{ConfigError, Experiment, ExperimentConfig};
pub use error::{Result, ShotgunError};
pub use result::ResultDocument;
