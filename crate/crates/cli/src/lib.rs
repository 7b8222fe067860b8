//! Command-line front end: model files, CSV tables, experiments and
//! subcommand dispatch.

pub mod commands;
pub mod error;
pub mod experiments;
pub mod model_file;
pub mod table;
