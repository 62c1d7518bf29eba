//! Batch front end for `volterra-core`: reads a TOML system config, runs the
//! selected engine, writes CSV tables and a plain-text report.

pub mod config;
pub mod engine;
pub mod output;

pub use config::{ConfigError, RunConfig};
pub use engine::{run, verify, CliError, Options, Outcome};
