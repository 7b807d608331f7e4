//! Experiment harness: protocol configs, evaluation pools, metrics files and
//! summaries for continual-learning runs on the grid task suite.

pub mod analysis;
pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod oracles;
pub mod summary;

pub use config::{ExperimentConfig, Protocol};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, run_seed, run_seeds, RunOptions, SeedRun};
