use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Operand shapes do not agree.
    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    Shape {
        op: &'static str,
        expected: String,
        found: String,
    },

    /// A NaN or infinite value was supplied where finite data is required.
    #[error("non-finite value at {location}")]
    NonFinite { location: String },

    /// An iterative kernel hit its iteration cap.
    #[error("{algorithm} did not converge within {cap} sweeps")]
    NoConvergence { algorithm: &'static str, cap: usize },

    /// A linear system is too ill-conditioned to solve reliably.
    #[error("matrix is singular or ill-conditioned (condition estimate {condition:e}); {advice}")]
    Singular { condition: f64, advice: &'static str },

    /// The data carries less information than the request needs.
    #[error("degenerate data: effective rank {effective_rank} is below the requested rank {requested}")]
    Degenerate {
        effective_rank: usize,
        requested: usize,
    },

    /// A file did not match its expected format.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
