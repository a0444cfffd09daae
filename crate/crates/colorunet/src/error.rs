use std::path::PathBuf;

/// Error type shared by every module in the crate.
///
/// Variants map onto the process exit codes used by the command-line
/// interface: `Config` exits with 2, the data-shaped variants (`Io`,
/// `Image`, `Format`, `Data`, `Shape`) with 3, and `Numeric` with 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: bad flag value, malformed config file,
    /// inconsistent option combination.
    #[error("config: {0}")]
    Config(String),

    /// Filesystem problem, annotated with the path involved.
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    /// Image decoding or encoding failure.
    #[error("image: {path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },

    /// Malformed binary or text artifact: bad magic, version mismatch,
    /// truncation, checksum failure.
    #[error("format: {0}")]
    Format(String),

    /// Structurally valid input with unusable content (empty corpus,
    /// out-of-range label, pixel values outside the unit interval).
    #[error("data: {0}")]
    Data(String),

    /// Tensor shape mismatch.
    #[error("shape: {0}")]
    Shape(String),

    /// Numerical failure: non-finite loss or gradient, divergence.
    #[error("numeric: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code of the process when this error reaches `main`.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. }
            | Error::Image { .. }
            | Error::Format(_)
            | Error::Data(_)
            | Error::Shape(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}
