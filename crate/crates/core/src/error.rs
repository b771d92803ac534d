use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no strongly connected draw after {attempts} attempts (edge probability too small for the node count?)")]
    RetryExhausted { attempts: usize },

    #[error("topology horizon exhausted at step {step}")]
    HorizonExhausted { step: usize },

    #[error("eigenvalue iteration did not converge on a {size}x{size} matrix")]
    EigenNoConvergence { size: usize },

    #[error("objective is not strongly convex (mu = {mu:e})")]
    NotStronglyConvex { mu: f64 },

    #[error("optimum solver exhausted its budget of {iterations} iterations (gradient norm {grad_norm:e})")]
    BudgetExhausted { iterations: usize, grad_norm: f64 },

    #[error("iterates became non-finite at step {step}; step size too large?")]
    Diverged { step: usize },

    #[error("matrix is singular")]
    Singular,

    #[error("trace is missing block snapshots")]
    MissingSnapshots,

    #[error("parse error in {what} at line {line}: {message}")]
    Parse {
        what: &'static str,
        line: usize,
        message: String,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
