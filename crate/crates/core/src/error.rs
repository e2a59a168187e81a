use thiserror::Error;

/// Errors produced by the transport solvers and the inference routines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// Malformed or out-of-contract input.
    #[error("invalid input: {0}")]
    Input(String),

    /// An iterative solver stopped before reaching its tolerance.
    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// A linear system that must be nonsingular was not.
    #[error("degenerate system: {0}")]
    Degeneracy(String),

    /// The alternative-regime sampler was called on a null configuration.
    #[error("regime error: {0}")]
    Regime(String),

    /// QR retraction met a rank-deficient update.
    #[error("retraction failed: {0}")]
    Retraction(String),

    /// The p-th root is not differentiable at zero transport cost.
    #[error("singular derivative: {0}")]
    Singularity(String),

    /// Solver-internal failure; indicates a bug or a pathological instance.
    #[error("internal solver error: {0}")]
    Internal(String),

    /// Error raised inside the evaluation of projection frame `frame`.
    #[error("frame {frame}: {source}")]
    Frame { frame: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn in_frame(self, frame: usize) -> Self {
        match self {
            Error::Frame { .. } => self,
            other => Error::Frame {
                frame,
                source: Box::new(other),
            },
        }
    }

    /// Innermost error, with frame annotations stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Frame { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors a caller can fix by changing inputs or configuration.
    pub fn is_input(&self) -> bool {
        matches!(self.root(), Error::Input(_) | Error::Regime(_))
    }

    /// True for solver failures that may be resolved with more iterations or restarts.
    pub fn is_convergence(&self) -> bool {
        matches!(self.root(), Error::Convergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
