//! Command-line front end for the `fabricsim` model: configuration parsing
//! and mode dispatch. The binary in `main.rs` is a thin wrapper.

pub mod config;
pub mod run;

pub use config::{parse_config, parse_config_str, Mode, RunConfig};
pub use run::run;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or input files.
    #[error("validation error: {0}")]
    Validation(String),
    /// The model rejected or failed on a valid configuration.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}
