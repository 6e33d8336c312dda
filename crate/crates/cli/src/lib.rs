//! File formats, reports and the command-line front end of the
//! `hydrovalley` solvers.

pub mod bench;
pub mod commands;
pub mod error;
pub mod output;
pub mod valley_file;

pub use error::{CliError, Result};
