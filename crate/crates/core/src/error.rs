use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape mismatch, non-scalar loss, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input outside the domain of a transform.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested operation needs a capability the model does not have.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed dataset or checkpoint bytes.
    #[error("data format error: {0}")]
    Format(String),

    /// An iterative numeric procedure failed to converge or produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Enumeration or quadrature space too large for the configured budget.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
