use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid bet vector: {0}")]
    InvalidBet(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("iteration limit of {0} reached without shrinking the bracket")]
    IterationLimit(usize),

    /// The Markowitz mapping needs `mu'b < 1/eta`, which only fails when the
    /// moments admit an arbitrage.
    #[error("no-arbitrage violation: eta * mu'b = {eta_mu_b} >= 1")]
    NoArbitrage { eta_mu_b: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
