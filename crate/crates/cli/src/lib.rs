//! Library half of the `hamlet` command-line tool: run configuration,
//! dataset conversion, baselines and the subcommands themselves.

pub mod baselines;
pub mod commands;
pub mod config;
pub mod convert;

pub use config::{AblationKind, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("numeric fault: {0}")]
    Numeric(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// Process exit status: 1 numeric fault, 2 usage or configuration,
    /// 3 I/O or file format.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Numeric(_) => 1,
            Self::Usage(_) | Self::Data(_) => 2,
            Self::Io(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
