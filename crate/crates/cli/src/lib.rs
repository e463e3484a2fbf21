//! Pipeline stages behind the `ldvae` binary: phantom generation,
//! training, scoring and cross-validated evaluation.

pub mod commands;
pub mod config;
mod error;

pub use config::RunConfig;
pub use error::{exit, CliError};
