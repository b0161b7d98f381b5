//! Library side of `orient-bench`: configuration, the experiment runner and
//! the subcommands, shared with the acceptance tests.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod report;

pub use config::ExperimentConfig;
