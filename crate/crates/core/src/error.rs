use thiserror::Error;

use crate::model::ConvergenceTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied data or parameters that violate a precondition.
    #[error("input error: {0}")]
    Input(String),

    /// A numerical invariant that the inputs should guarantee did not hold.
    #[error("internal error: {0}")]
    Internal(String),

    /// The OLS-based prior could not be elicited; fall back to flat priors.
    #[error("elicitation error: {0}")]
    Elicitation(String),

    /// The coordinate-ascent loop produced a non-finite objective.
    #[error("fit error: {message} (after {} iterations)", trace.iterations)]
    Fit {
        message: String,
        trace: Box<ConvergenceTrace>,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }
}
