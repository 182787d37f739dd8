use std::path::PathBuf;

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerics,
    Io,
}

impl ErrorCategory {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorCategory::Config => 1,
            ErrorCategory::Data => 2,
            ErrorCategory::Numerics => 3,
            ErrorCategory::Io => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{source_name}, line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("non-uniform sample spacing at index {index}: interval {found} s, expected {expected} s")]
    NonUniformSpacing { index: usize, found: f64, expected: f64 },

    #[error("{source_name}: missing column `{column}`")]
    MissingColumn { source_name: String, column: String },

    #[error("state of charge left [0, 1] at sample {index} (z = {soc})")]
    SocOutOfRange { index: usize, soc: f64 },

    #[error("time {t} s is outside the profile range [0, {end}] s")]
    TimeOutOfRange { t: f64, end: f64 },

    #[error("trace `{label}` has {len} samples, at least {needed} are required")]
    TraceTooShort { label: String, len: usize, needed: usize },

    #[error("invalid window start {start}: {reason}")]
    InvalidWindow { start: usize, reason: String },

    #[error("division by zero at tape node {node}")]
    DivisionByZero { node: usize },

    #[error("backward pass needs a scalar output, node {node} is {rows}x{cols}")]
    NonScalarOutput { node: usize, rows: usize, cols: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("checkpoint format version {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupted checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("gradient check failed: max relative error {max:.3e} exceeds {tol:e}")]
    GradientMismatch { max: f64, tol: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::InvalidParameter(_)
            | Error::Parse { .. }
            | Error::NonUniformSpacing { .. }
            | Error::MissingColumn { .. }
            | Error::SocOutOfRange { .. }
            | Error::TimeOutOfRange { .. }
            | Error::TraceTooShort { .. }
            | Error::InvalidWindow { .. }
            | Error::CheckpointVersion { .. }
            | Error::CorruptCheckpoint(_) => ErrorCategory::Data,
            Error::DivisionByZero { .. }
            | Error::NonScalarOutput { .. }
            | Error::NonFiniteLoss { .. }
            | Error::GradientMismatch { .. } => ErrorCategory::Numerics,
            Error::Io { .. } => ErrorCategory::Io,
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
