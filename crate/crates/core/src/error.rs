use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{what} at knot {knot} is not positive definite")]
    Factorization { what: &'static str, knot: usize },
    #[error("PCG breakdown at iteration {iteration}: non-positive curvature")]
    PcgBreakdown { iteration: usize },
    #[error("SQP iteration {iteration}: {source}")]
    Sqp {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("solve panicked: {0}")]
    Panicked(String),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            got,
        }
    }

    /// Numerical failures the SQP loop recovers from by raising the damping.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Factorization { .. } | Error::PcgBreakdown { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
