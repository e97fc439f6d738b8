//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numerical procedure failed (indefinite matrix, negative spectrum,
    /// norm blow-up past the guard threshold, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A coefficient evaluation contradicted one of its declared constants.
    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    /// A trajectory left the representable range.
    #[error("solution blew up at step {step} (t = {time:.6}): {what}")]
    BlowUp { step: usize, time: f64, what: String },

    /// An exponential fit could not be performed (signal below noise, too
    /// few usable points).
    #[error("fit failed: {0}")]
    FitFailure(String),

    /// Config-file problems: unknown keys, missing sections, bad values.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
