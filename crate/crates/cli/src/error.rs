use std::io;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error(transparent)]
    Other(ensgan_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    /// 2 config, 3 numeric failure, 4 missing or corrupt artifact, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::MissingArtifact(_) => 4,
            CliError::Other(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<ensgan_core::Error> for CliError {
    fn from(e: ensgan_core::Error) -> Self {
        use ensgan_core::Error as E;
        match e {
            E::Config(m) | E::InsufficientData(m) => CliError::Config(m),
            E::NonFinite(_) | E::DegenerateWeights { .. } => CliError::Numeric(e.to_string()),
            E::Io(ref io) if io.kind() == io::ErrorKind::NotFound => {
                CliError::MissingArtifact(e.to_string())
            }
            E::Format(_) => CliError::MissingArtifact(e.to_string()),
            other => CliError::Other(other),
        }
    }
}
