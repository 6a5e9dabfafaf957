use thiserror::Error;

/// Errors raised by the estimator, model and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SalMoeError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The gating design `TᵀT` is singular or numerically so.
    #[error("singular gating design: {0}")]
    SingularDesign(String),

    /// Component `component` (1-based) has vanishing total responsibility.
    #[error("component {component} is empty (total responsibility {mass:.3e}); restart advised")]
    EmptyComponent { component: usize, mass: f64 },

    /// The weighted normal equations for component `component` (1-based) are ill-conditioned.
    #[error("singular regression system for component {component} (rcond {rcond:.3e})")]
    SingularSystem { component: usize, rcond: f64 },

    #[error("could not draw a non-degenerate {k}-group partition after {attempts} attempts")]
    DegeneratePartition { k: usize, attempts: usize },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid scenario specification: {0}")]
    InvalidSpec(String),

    #[error("unknown scenario '{name}'; available: {available}")]
    UnknownScenario { name: String, available: String },

    #[error("{failed} of {total} bootstrap replicates failed (more than 20%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("all {0} restarts failed")]
    AllRestartsFailed(usize),
}

pub type Result<T, E = SalMoeError> = std::result::Result<T, E>;
