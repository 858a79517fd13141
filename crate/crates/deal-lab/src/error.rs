use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An operation was called outside its contract (wrong phase, missing
    /// gradient, non-scalar loss, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Invalid configuration value or file.
    #[error("config error: {0}")]
    Config(String),

    /// A required artifact (dataset, CAM directory, checkpoint) is missing.
    #[error("missing artifact: {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    /// NaN or non-finite value detected where finiteness is guaranteed.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Persisted file does not match the expected schema/version.
    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 missing artifact, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Schema(_) => 2,
            Error::MissingArtifact { .. } | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
            _ => 1,
        }
    }
}
