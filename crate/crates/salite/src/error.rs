use std::io;
use std::path::PathBuf;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// Malformed image file; `offset` is the byte where decoding stopped.
    #[error("{}: byte {offset}: {reason}", path.display())]
    Image { path: PathBuf, offset: usize, reason: String },
    #[error("{}:{line}: {reason}", path.display())]
    Manifest { path: PathBuf, line: usize, reason: String },
    /// Bad configuration; `origin` names the file line or flag.
    #[error("{origin}: {reason}")]
    Config { origin: String, reason: String },
    /// Failure while handling one manifest row.
    #[error("{}:{line}: {source}", manifest.display())]
    Row {
        manifest: PathBuf,
        line: usize,
        source: Box<AppError>,
    },
    #[error("training diverged at step {step}: non-finite {term}")]
    Diverged { step: u64, term: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] salite_core::Error),
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    /// Process exit status: 1 validation, 2 I/O, 3 numeric.
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Io { .. } | AppError::Image { .. } => 2,
            AppError::Row { source, .. } => source.exit_code(),
            AppError::Diverged { .. } | AppError::Core(salite_core::Error::NonFinite { .. }) => 3,
            AppError::Core(
                salite_core::Error::BadMagic | salite_core::Error::Version { .. } | salite_core::Error::Truncated { .. } | salite_core::Error::Malformed(_),
            ) => 2,
            _ => 1,
        }
    }
}
