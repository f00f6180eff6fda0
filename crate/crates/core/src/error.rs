use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Input outside an operation's domain (shapes, ranges, sizes).
    #[error("domain error: {0}")]
    Domain(String),
    /// Arithmetic failure such as division by zero.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Caller violated a sequencing contract.
    #[error("state error: {0}")]
    State(String),
    /// A loss or gradient became NaN or infinite during optimization.
    #[error("non-finite {quantity} at iteration {t}: {value}")]
    NonFinite {
        t: u64,
        quantity: &'static str,
        value: f64,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
