use thiserror::Error;

/// Errors raised anywhere in the forecasting stack.
///
/// Variants are grouped so callers (the CLI in particular) can map them onto
/// stable exit codes with [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("data error: {0}")]
    Data(String),

    #[error("insufficient data for series '{series}': need {needed} observations, have {got}")]
    InsufficientData {
        series: String,
        needed: usize,
        got: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("tape error: {0}")]
    Tape(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("metric undefined: base forecaster has zero error everywhere")]
    UndefinedMetric,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file truncated")]
    Truncated,
    #[error("checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Crc { stored: u32, computed: u32 },
    #[error("integrity error: {0}")]
    Integrity(String),
}

/// Coarse error category, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Data(_) | Error::InsufficientData { .. } => ErrorKind::Data,
            Error::Config(_) | Error::Checkpoint(_) => ErrorKind::Config,
            _ => ErrorKind::Runtime,
        }
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
