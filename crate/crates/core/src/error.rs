use thiserror::Error;

/// Failures raised by the geometric evaluators.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeomError {
    /// An elementary function was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// Jets only carry derivative orders 1 through 3.
    #[error("jet order {0} outside 1..=3")]
    InvalidOrder(u8),
    /// The background metric is not invertible at the sample point.
    #[error("singular background metric at x = {0:?}")]
    SingularMetric(Vec<f64>),
    /// The tangent vector is too close to the Finsleroid axis (`y = +-b`).
    #[error("tangent vector within the pole guard: q~ = {qt:e}, |y|_a = {norm:e}")]
    PoleProximity { qt: f64, norm: f64 },
    /// A zero tangent vector was supplied where a direction is required.
    #[error("zero tangent vector")]
    ZeroVector,
    /// Newton iteration for the inverse map failed.
    #[error("inverse map did not converge after {iterations} iterations (last update {update:e})")]
    NoConvergence { iterations: usize, update: f64 },
    /// A quantity that must lie in a bounded range escaped it beyond rounding.
    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),
    /// A transported vector entered the pole guard.
    #[error("transport entered the pole guard at s = {s}")]
    PoleCrossing { s: f64 },
    /// The metric function drifted by more than the per-step budget.
    #[error("transport step too large: K drift {drift:e} per step at s = {s}")]
    StepTooLarge { s: f64, drift: f64 },
    /// The requested operation only holds for unit-norm 1-forms.
    #[error("operation requires c = 1 (got c = {0})")]
    RequiresUnitNorm(f64),
    /// Model parameters violate the model invariants.
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

pub type Result<T, E = GeomError> = std::result::Result<T, E>;
