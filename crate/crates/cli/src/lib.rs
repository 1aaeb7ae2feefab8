//! Benchmark harness for preconditioned SGD: experiment configuration, seeded
//! runs with CSV logs and summaries, preconditioner fitting runs, and the
//! verification suite.

pub mod args;
pub mod config;
pub mod error;
pub mod fit;
pub mod precond_spec;
pub mod runner;
pub mod verify;

pub use config::{ExperimentConfig, Testbed};
pub use error::{CliError, Result};
pub use precond_spec::PrecondSpec;
pub use runner::{run_experiment, RunRecord, SeedOutcome, Summary};
