//! Library side of the `carmine` command: run configuration and pipeline stages.

pub mod config;
pub mod pipeline;

/// Errors surfaced to the command line, each mapped to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or inputs, detected before work starts.
    #[error("{0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { .. } => 3,
        }
    }
}
