use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("state space exceeds cap: {states} states > {cap}")]
    Capacity { states: usize, cap: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    ChecksumMismatch { stored: u64, computed: u64 },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed demonstration file: {0}")]
    DemoFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code of the command-line tool for this error: 2 for
    /// configuration problems, 3 for unreadable or inconsistent input files,
    /// 4 for divergence and 5 for damaged checkpoints.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) | Error::Capacity { .. } => 2,
            Error::Io { .. } | Error::DemoFormat(_) => 3,
            Error::Divergence(_) | Error::NonConvergence { .. } | Error::Numerical(_) => 4,
            Error::ChecksumMismatch { .. } | Error::VersionMismatch { .. } | Error::Checkpoint(_) => 5,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
