//! Library side of the `metass` command-line tool.
//!
//! Each subcommand is a plain function over a resolved [`RunConfig`], so the
//! pipeline can be driven in-process as well as from the binary.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{exit, CliError};
