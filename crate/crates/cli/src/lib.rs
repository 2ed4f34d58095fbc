//! Experiment runner behind the `bayesoed` binary.
//!
//! A TOML config describes the model, prior, sensors, noise, assimilation
//! window and (optionally) the design problem; [`pipeline::run`] executes one
//! of the pipelines and writes CSV tables, text matrices and a
//! `result.json` bundle into the output directory.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod pipeline;
pub mod seeds;
pub mod setup;

use std::fmt;

use config::Diagnostic;

#[derive(Debug)]
pub enum CliError {
    Validation(Vec<Diagnostic>),
    /// The solver stopped early; results were still written.
    NonConvergence(String),
    Io(String),
    /// The configuration passed validation but the problem it describes is
    /// unusable (for example a singular covariance).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Runtime(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(d) => {
                write!(f, "invalid configuration ({} problem{}):", d.len(), if d.len() == 1 { "" } else { "s" })?;
                for diag in d {
                    write!(f, "\n  {diag}")?;
                }
                Ok(())
            }
            CliError::NonConvergence(m) => write!(f, "solver did not converge: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<bayesoed::Error> for CliError {
    fn from(e: bayesoed::Error) -> Self {
        match e {
            bayesoed::Error::NonConvergence(_) | bayesoed::Error::OedNonConvergence(_) => {
                CliError::NonConvergence(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
