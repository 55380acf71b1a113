//! Configuration files, a thread-pool executor and the experiment runner
//! around `stochflow-core`.

pub mod config;
pub mod executor;
pub mod runner;
pub mod table;

pub use config::{parse_config, serialize_config, ConfigError, ExperimentConfig};
pub use executor::RayonExecutor;
pub use runner::{run_experiment, RunError, RunOptions, RunOutcome};
