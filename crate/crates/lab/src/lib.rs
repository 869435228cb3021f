//! File formats, configuration and subcommands for the `softmax-lab` tool.

pub mod commands;
pub mod config;
pub mod formats;
pub mod plot;

pub use config::RunConfig;
