//! Command-line front end for the recommendation engine: dataset
//! preparation, training, evaluation, grid search, and embedding export.
//! Split out as a library so integration tests can drive the subcommands
//! in-process.

pub mod commands;
pub mod config;
pub mod manifest;
