use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("{name} = {value} is outside its domain ({expected})")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    /// A quantity the formula divides by vanished.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Decoy intensities are not in the order a bound formula needs.
    #[error("intensity ordering violated: {0}")]
    Ordering(String),

    #[error("{tier} decoy estimation needs {needed} observations, got {got}")]
    InsufficientObservations {
        tier: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("invalid yield bounds: {0}")]
    InvalidBounds(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("observation file: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, expected: &'static str) -> Self {
        Error::Domain {
            name,
            value,
            expected,
        }
    }
}
