//! Library half of the `gploo` command-line tool: configuration parsing,
//! bundled datasets, and the experiment runners. The binary in `main.rs` is a
//! thin argument-parsing wrapper over these modules.

use std::fmt;

pub mod config;
pub mod registry;
pub mod runner;

/// Errors split by exit code: bad input (2) vs numerical/inference failure (1).
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Inference(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn inference(msg: impl Into<String>) -> Self {
        CliError::Inference(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Inference(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Inference(m) => write!(f, "inference error: {m}"),
        }
    }
}

impl From<gploo::Error> for CliError {
    fn from(e: gploo::Error) -> Self {
        match &e {
            gploo::Error::InvalidInput(_)
            | gploo::Error::Io(_)
            | gploo::Error::Csv(_)
            | gploo::Error::UnsupportedOperation(_) => CliError::Input(e.to_string()),
            _ => CliError::Inference(e.to_string()),
        }
    }
}
