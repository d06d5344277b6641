use thiserror::Error;

/// Errors raised by the interpolation, advection and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value encountered{}", step_suffix(*.step))]
    NonFinite { step: Option<u64> },

    #[error("grid mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty particle set")]
    EmptyParticles,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn step_suffix(step: Option<u64>) -> String {
    match step {
        Some(s) => format!(" at step {s}"),
        None => String::new(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }
}
