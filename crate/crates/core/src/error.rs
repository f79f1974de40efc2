use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("scale factor of component {0} has a non-positive diagonal entry")]
    SingularScale(usize),

    #[error("degenerate state: every back-mapped point lies outside the target support")]
    DegenerateState,

    #[error("bridge iteration did not converge in {iterations} iterations (last log r = {last_log_r})")]
    NonConvergence { iterations: usize, last_log_r: f64 },

    #[error("no overlap: every bridge term is zero")]
    NoOverlap,

    #[error("component {component} has {count} assigned samples, fewer than the minimum {min}")]
    SmallComponent { component: usize, count: usize, min: usize },

    #[error("divergent integral: {0}")]
    Divergent(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
