use thiserror::Error;

/// Errors surfaced by the library. CLI exit codes are derived from the variant.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A piece of an excursion split is shorter than two grid cells.
    #[error("degenerate split: piece {piece} spans {cells:.3} grid cells")]
    DegenerateSplit { piece: usize, cells: f64 },

    #[error("capacity exceeded: {what} needs {needed} cells, budget is {budget}")]
    Capacity {
        what: String,
        needed: u128,
        budget: u128,
    },

    #[error("incomplete cascade: {0}")]
    IncompleteCascade(String),

    #[error("truncation remainder {bound:e} exceeds requested accuracy {accuracy:e}")]
    Truncation { bound: f64, accuracy: f64 },

    #[error("window [{lo:e}, {hi:e}] is not resolved: {reason}")]
    WindowUnresolved { lo: f64, hi: f64, reason: String },

    #[error("renewal integrand not decayed at the window edge: {0}")]
    Tail(String),

    #[error("eigenvalue budget exceeded: N = {count} above cap {cap}")]
    EigenBudget { count: usize, cap: usize },

    #[error("count {fast} at λ = {lambda:e} disagrees with dense oracle count {dense}")]
    OracleMismatch {
        lambda: f64,
        fast: usize,
        dense: usize,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors that indicate a numerical guard tripped rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Truncation { .. }
                | Error::WindowUnresolved { .. }
                | Error::Tail(_)
                | Error::OracleMismatch { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
