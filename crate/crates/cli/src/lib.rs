//! Library surface behind the `omap` binary: configuration, the OMAP
//! container format, rendering, and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod container;
pub mod render;
