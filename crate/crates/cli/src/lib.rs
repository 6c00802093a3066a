//! Command-line harness for the imitation pipeline: experiment configs,
//! per-stage subcommands, learning-curve aggregation and plotting.

pub mod commands;
pub mod config;
pub mod plot;
