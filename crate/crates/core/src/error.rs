//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition (bad ids, empty input,
    /// frame overlap, ...). The message names the offending value.
    #[error("{0}")]
    InvalidArgument(String),

    /// A text input (detections file, sidecar, config) failed to parse.
    /// `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Config key that no module declares.
    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    /// Metrics are undefined without ground truth.
    #[error("empty ground truth")]
    EmptyGroundTruth,

    /// Checkpoint file is corrupt or was written by an incompatible build.
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for the common "caller handed us something inconsistent" case.
pub fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
