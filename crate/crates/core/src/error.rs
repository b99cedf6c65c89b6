use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violates a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Model parameters fail the stability check used before simulation.
    #[error(
        "unstable model: max row sum of |beta| * kernel integral is {row_sum:.4} (must be < 1)"
    )]
    Unstable { row_sum: f64 },

    /// The thinning sampler produced more events than the configured cap.
    #[error("runaway simulation: more than {cap} events")]
    Runaway { cap: usize },

    /// A non-finite intensity or objective was encountered.
    #[error("numerical overflow: {0}")]
    Overflow(String),

    /// The solver did not reach its tolerance.
    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    /// A de-correlated column or score variance is degenerate.
    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
