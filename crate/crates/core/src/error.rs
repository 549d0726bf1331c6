//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors produced by mesh construction, kernel evaluation, assembly and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// The requested domain rectangle has zero or negative extent.
    #[error("degenerate domain rectangle: [{x0}, {x1}] x [{y0}, {y1}]")]
    DegenerateDomain { x0: f64, x1: f64, y0: f64, y1: f64 },

    /// A mesh resolution parameter was zero.
    #[error("mesh subdivision count must be at least 1")]
    EmptyMesh,

    /// An exponent value left the admissible range `q > 1`.
    #[error("exponent q = {q} outside the admissible range q > 1")]
    ExponentOutOfRange { q: f64 },

    /// Exponent-field parameters outside their admissible ranges.
    #[error("invalid exponent field: {reason}")]
    InvalidExponentField { reason: String },

    /// The kernel regularization parameter must be finite and non-negative.
    #[error("regularization parameter delta = {delta} must be finite and >= 0")]
    InvalidRegularization { delta: f64 },

    /// The Jacobian of the flux kernel is unbounded at the requested point
    /// (`delta = 0`, `q < 2`, evaluated at the zero vector).
    #[error("flux kernel Jacobian is singular at a = 0 for delta = 0, q = {q} < 2")]
    SingularKernelJacobian { q: f64 },

    /// A scalar root solve did not reach the requested tolerance.
    #[error("root solve for the conjugate N-function failed: {reason}")]
    RootSolveFailed { reason: String },

    /// Evaluation of a manufactured solution at its singular point.
    #[error("manufactured solution is singular at the origin; cannot evaluate there")]
    OriginEvaluation,

    /// A point was passed to a side-local operation but does not lie on the side.
    #[error("point ({x}, {y}) does not lie on side {side}")]
    PointNotOnSide { side: usize, x: f64, y: f64 },

    /// Mismatched vector length for a discrete field.
    #[error("field has {got} entries but the {space} space has {expected} degrees of freedom")]
    FieldSizeMismatch { space: &'static str, expected: usize, got: usize },

    /// A linear solve inside Newton's method broke down.
    #[error("linear solver failed: {reason}")]
    LinearSolveFailed { reason: String },

    /// Newton's method stopped without meeting its tolerance; the report
    /// carries the iteration history for diagnosis.
    #[error("Newton did not converge: {reason}")]
    NewtonDidNotConverge {
        reason: String,
        report: Box<crate::solver::SolveReport>,
    },

    /// Malformed mesh or field file.
    #[error("parse error in {what}: {reason}")]
    ParseError { what: &'static str, reason: String },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
