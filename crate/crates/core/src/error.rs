use thiserror::Error;

/// Errors raised by the regularisation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("regularisation vector must have at least one positive component")]
    ZeroAlpha,
    #[error("regularisation parameter alpha_{index} is zero")]
    ZeroComponent { index: usize },
    #[error("similarity is infinite: {0}")]
    InfiniteSimilarity(String),
    #[error("value is infinite: {0}")]
    InfiniteValue(String),
    #[error("linear system is singular: {0}")]
    Singular(String),
    #[error("operation requires a linear operator")]
    NonlinearOperator,
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("psi is unbounded: the linear part of the index functions dominates")]
    UnboundedPsi,
    #[error("similarity measure declares no quasi-triangle constant")]
    MissingTriangleConstant,
    #[error("certificate check failed: violation {violation:e} at penalty {penalty} (sample {sample})")]
    CertificateViolation {
        violation: f64,
        penalty: usize,
        sample: usize,
    },
    #[error("schedule not admissible: {0}")]
    Schedule(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
