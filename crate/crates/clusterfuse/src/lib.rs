//! Scenario files, CSV/JSON output and the command-line driver for
//! `clusterfuse-core`.

pub mod cli;
pub mod config;
pub mod output;
