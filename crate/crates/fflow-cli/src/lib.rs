//! Library surface of the `fflow` command-line driver: run configuration,
//! presets, and the experiment pipelines behind the subcommands.

pub mod config;
pub mod pipeline;
