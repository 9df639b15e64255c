//! Command-line front end: analysis, inference, tracing, device link,
//! dataset generation, evaluation and the acceptance self-test.

pub mod commands;
pub mod config;
pub mod error;
pub mod selftest;

pub use error::{CliError, Result};
