//! Benchmark harness for hybrid learning runs: configuration files, a
//! parallel multi-seed runner, and the curve/summary writers behind the
//! `hybridctl` binary.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{ConfigError, RunConfig};
pub use runner::{run_seeds, thread_count, SeedRun};
