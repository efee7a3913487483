use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// The scenario file could not be read, parsed or validated.
    #[error("config error: {0}")]
    Config(String),

    #[error("power-law fit needs at least two points (got {0})")]
    NeedTwoPoints(usize),

    #[error("numerical error: {0}")]
    Numerical(#[from] dfs_core::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serialize(String),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::NeedTwoPoints(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } | CliError::Serialize(_) => 1,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
