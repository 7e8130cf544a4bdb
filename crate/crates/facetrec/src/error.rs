use std::io;
use std::path::PathBuf;

/// Failures reading or writing the on-disk formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("not a {expected} file")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },
    #[error("id-map digest does not match the graph")]
    DigestMismatch,
    #[error("file is truncated")]
    Truncated,
    #[error("checksum mismatch, file is corrupt")]
    Checksum,
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Core(#[from] facetrec_core::Error),
}

impl FormatError {
    /// Stable process exit code for this error class.
    pub fn code(&self) -> u8 {
        match self {
            FormatError::Io { .. } => 10,
            FormatError::BadMagic { .. } => 11,
            FormatError::Version { .. } => 12,
            FormatError::DigestMismatch => 13,
            FormatError::Truncated => 14,
            FormatError::Checksum => 15,
            FormatError::Malformed(_) => 16,
            FormatError::Core(_) => 17,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        FormatError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type FormatResult<T> = Result<T, FormatError>;
