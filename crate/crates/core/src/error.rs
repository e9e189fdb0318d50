use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument is outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// The call itself is malformed (wrong convention, mismatched sizes, missing fields).
    #[error("usage error: {0}")]
    Usage(String),

    /// A concentration bound or test cannot be applied with this many samples.
    #[error("insufficient samples: {what} needs at least {min} samples, got {got}")]
    InsufficientSamples { what: &'static str, min: f64, got: f64 },

    #[error("record file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    /// True for errors caused by parameters that are valid but cannot be satisfied
    /// (e.g. a sample count too small for the requested confidence).
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::InsufficientSamples { .. })
    }
}
