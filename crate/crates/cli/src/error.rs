use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed configuration; the message names the offending key.
    #[error("config error at `{key}`: {message}")]
    Schema { key: String, message: String },

    /// A referenced input file is missing, unreadable or altered.
    #[error("input error ({}): {message}", path.display())]
    Input { path: PathBuf, message: String },

    #[error("{stage} failed: {source}")]
    Core {
        stage: &'static str,
        #[source]
        source: fade_core::Error,
    },

    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn schema(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Schema {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn input(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Input {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit status; clap uses 2 for usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema { .. } => 3,
            CliError::Input { .. } => 4,
            CliError::Core { .. } => 5,
            CliError::Output { .. } => 6,
        }
    }
}

/// Attaches the pipeline stage to a core error.
pub(crate) trait Stage<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T> Stage<T> for fade_core::Result<T> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|source| CliError::Core { stage, source })
    }
}
