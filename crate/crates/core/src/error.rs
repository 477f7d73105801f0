use thiserror::Error;

/// Which oracle produced a non-finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTarget {
    Objective,
    Constraint,
    Gradient,
    Jacobian,
}

impl std::fmt::Display for EvalTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EvalTarget::Objective => "objective",
            EvalTarget::Constraint => "constraint",
            EvalTarget::Gradient => "objective gradient",
            EvalTarget::Jacobian => "constraint jacobian",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("evaluation failure: non-finite {target} value at index {index}")]
    Evaluation { target: EvalTarget, index: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("factorization failed: matrix indefinite after diagonal shift {shift:e}")]
    Factorization { shift: f64 },

    #[error("QP subproblem failed: {0}")]
    Subproblem(String),

    #[error("line search failed after {backtracks} backtracks (pi = {pi:e})")]
    LineSearch { backtracks: usize, pi: f64 },

    #[error("unknown problem '{0}'")]
    UnknownProblem(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SolverError>;
