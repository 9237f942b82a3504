//! Configuration, presets and subcommands of the `spinecho` binary.

pub mod commands;
pub mod config;
pub mod presets;
