//! Configuration, orchestration and reporting for the `metts` binary.

pub mod compare;
pub mod config;
pub mod oracle;
pub mod runner;

pub use config::RunConfig;
pub use runner::{run, RunOptions, RunSummary};
