use thiserror::Error;

/// Error type shared by every module in the crate.
///
/// Variants are grouped by how the CLI maps them to exit codes: parameter
/// errors are configuration mistakes (exit 2), data/support/range errors mean
/// the inputs cannot answer the question asked (exit 3), numeric/resolution
/// errors mean floating-point arithmetic gave up (exit 4), and
/// capacity/budget errors mean a declared work limit was exceeded (exit 5).
#[derive(Debug, Error)]
pub enum Error {
    /// An argument or configuration field is outside its documented domain.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: String, reason: String },

    /// Input data is malformed or inconsistent (bad header, non-finite
    /// sample, shape mismatch).
    #[error("data error: {0}")]
    Data(String),

    /// A query point lies off the support of the empirical measure and the
    /// caller did not opt into the off-support convention.
    #[error("support error: {0}")]
    Support(String),

    /// No datum falls inside the requested range (e.g. every pair distance
    /// exceeds the largest radius).
    #[error("range error: {0}")]
    Range(String),

    /// Floating-point computation failed to converge or produced
    /// non-finite intermediates where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A quadrature or ladder is too coarse for the requested tolerance.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// The requested computation exceeds a fixed structural capacity
    /// (e.g. quantization depth beyond exact f64 range).
    #[error("capacity error: {0}")]
    Capacity(String),

    /// The requested computation exceeds a configurable work budget.
    #[error("budget error: {0}")]
    Budget(String),

    /// An underlying file could not be read or written.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parameter(name: &str, reason: impl Into<String>) -> Self {
        Error::Parameter { name: name.to_string(), reason: reason.into() }
    }

    /// Exit-code class used by the command-line front end. Unusable paths
    /// are configuration mistakes, so io failures map to exit 2.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Parameter { .. } | Error::Io(_) => 2,
            Error::Data(_) | Error::Support(_) | Error::Range(_) => 3,
            Error::Numeric(_) | Error::Resolution(_) => 4,
            Error::Capacity(_) | Error::Budget(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
