use thiserror::Error;

/// Errors raised by the form algebra, bundle calculus and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid multi-index: {0}")]
    InvalidMultiIndex(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degree out of range: {0}")]
    DegreeOutOfRange(String),

    #[error("metric is not symmetric positive definite at {point:?}")]
    MetricNotSpd { point: Vec<f64> },

    #[error("nonpositive density {value} at quadrature node {point:?}")]
    NonpositiveDensity { value: f64, point: Vec<f64> },

    #[error("singular Jacobian at {point:?}")]
    SingularJacobian { point: Vec<f64> },

    #[error("form is not closed: residual {residual:e} exceeds tolerance {tolerance:e}")]
    NotClosed { residual: f64, tolerance: f64 },

    #[error("incompatible coefficient fields: {0}")]
    IncompatibleFields(String),

    #[error("parse error at {line}:{column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("no interior degrees of freedom: {0}")]
    NoInteriorDofs(String),

    #[error("objective is +inf at the initial field")]
    InfiniteInitialObjective,

    #[error("cost is not differentiable: {0}")]
    NotDifferentiable(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
