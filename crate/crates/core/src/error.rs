use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("insufficient samples: need at least {needed}, got {got}{hint}")]
    InsufficientSamples {
        needed: usize,
        got: usize,
        hint: String,
    },

    #[error("matrix is not positive definite; last jitter tried {jitter:e}")]
    Singular { jitter: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("undefined angle: cosine distance of a zero vector")]
    UndefinedAngle,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: String, expected: &'static str },

    #[error("truncated file {path}: {detail}")]
    Truncated { path: String, detail: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOverflow { label: usize, classes: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    /// Any other error, tagged with the file being processed.
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

/// Failure classes used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Io => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::Contract(_)
            | Error::ShapeMismatch { .. }
            | Error::InvalidShape { .. }
            | Error::LabelOverflow { .. }
            | Error::Data(_) => ErrorClass::Config,
            Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::Manifest(_)
            | Error::Csv(_) => ErrorClass::Io,
            Error::NonFinite(_)
            | Error::InsufficientSamples { .. }
            | Error::Singular { .. }
            | Error::UndefinedAngle => ErrorClass::Numeric,
            Error::InFile { source, .. } => source.class(),
        }
    }

    /// Attaches `path` unless the error already names a file.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::Io { .. } | Error::BadMagic { .. } | Error::Truncated { .. } | Error::InFile { .. } => self,
            other => Error::InFile {
                path: path.into(),
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
