//! Command-line workflows for the llngm engine.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

pub use error::CliError;
