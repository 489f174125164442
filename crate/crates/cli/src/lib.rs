//! Configuration, subcommands and result persistence for the `cilwalk` binary.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{run_command, Command, Outcome};
pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<cilwalk_core::Error> for CliError {
    fn from(e: cilwalk_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else if let cilwalk_core::Error::Io(io) = e {
            CliError::Io(io)
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.into())
    }
}

/// Exit status for a run that completed but failed a verification check.
pub const EXIT_VERIFICATION_FAILED: i32 = 2;
