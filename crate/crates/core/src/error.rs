use thiserror::Error;

/// Errors raised by the inference pipeline.
///
/// The variants split into three families that callers treat differently:
/// configuration problems (bad input), statistical degeneracy (the data
/// admits no test), and internal inconsistencies (a bug or a numerical
/// breakdown that must not be papered over).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate detection: all {n_t} target points flagged as anomalies")]
    DegenerateDetection { n_t: usize },

    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    #[error("degenerate truncation region: {0}")]
    DegenerateRegion(String),

    #[error("transport solver did not converge within {0} pivots")]
    Solver(usize),

    #[error("basis integrity error: {0}")]
    BasisIntegrity(String),

    #[error("numerical inconsistency: {0}")]
    Numerical(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("line search stalled: {0}")]
    Stall(String),
}

impl Error {
    /// True for errors that reflect the data rather than a fault.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::DegenerateDetection { .. } | Error::DegenerateTest(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
