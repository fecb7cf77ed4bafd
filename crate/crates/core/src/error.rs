use thiserror::Error;

/// Errors produced by the key-rate pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("intensity ordering violated: mu1 = {mu1} must exceed mu2 = {mu2}")]
    Ordering { mu1: f64, mu2: f64 },

    #[error("dominance coefficients are not valid for these parameters")]
    InvalidCoefficients,

    #[error("series did not converge within {terms} terms")]
    Divergence { terms: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("observed counts are inconsistent with the yield model: {0}")]
    Infeasible(String),

    #[error("no feasible parameter point: {0}")]
    SearchFailure(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Domain(msg()))
    }
}

impl Error {
    /// Process exit status for command-line use.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible(_) => 3,
            Error::SearchFailure(_) => 1,
            _ => 2,
        }
    }
}
