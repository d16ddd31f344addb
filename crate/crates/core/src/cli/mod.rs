//! Configuration parsing, run orchestration and artifact emission for the
//! command-line interface.

pub mod config;
pub mod run;

pub use config::{parse_config, RunConfig};
