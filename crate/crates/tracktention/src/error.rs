use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by every fallible operation in the crate.
///
/// Variants are grouped by what went wrong rather than where: shape
/// disagreements, invalid configuration, numeric failures, malformed
/// inputs, and I/O. Messages name the offending values so CLI users can
/// act on them without a debugger.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or track shapes do not line up for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// A parameter value is outside its documented domain.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Non-finite values or a numerically degenerate computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A least-squares alignment had no unique solution.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// Byte-level parse failure in a binary or text payload.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    /// Synthetic data request that cannot be satisfied.
    #[error("generation error: {0}")]
    Generation(String),

    /// A guard against quadratic blow-up or similar limits tripped.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// Metric computation failed (e.g. no valid pixels).
    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(offset: u64, message: impl Into<String>) -> Self {
        Error::Parse { offset, message: message.into() }
    }

    /// Exit status this error maps to when surfaced by the CLI.
    pub fn exit_code(&self) -> i32 {
        2
    }
}
