use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The (jittered) matrix handed to the Cholesky factorization was not
    /// positive definite.
    #[error("factorization failed: matrix not positive definite at pivot {pivot} (jitter {jitter:e})")]
    FactorizationFailure { pivot: usize, jitter: f64 },

    #[error("invalid step size: a*h = {ah} must lie in (0, 2), the explicit Euler stability limit")]
    InvalidStep { ah: f64 },

    /// A sampled trajectory left the grid the field realization is defined on.
    #[error("trajectory left the sampling grid at t = {time}, x = {state}; widen the grid span")]
    GridEscape { time: f64, state: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}
