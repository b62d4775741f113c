//! File formats and command-line front end for `tsvc-core`.

pub mod commands;
pub mod csv_io;
pub mod dot;
pub mod error;
pub mod model_file;
pub mod report;
pub mod schema;

pub use error::CliError;
