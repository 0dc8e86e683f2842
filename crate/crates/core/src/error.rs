use thiserror::Error;

use crate::stepper::TrajectoryDiscrete;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("mass matrix (second fiber derivative) is singular: |det| = {abs_det:e}, cond = {condition:e}")]
    SingularMassMatrix { abs_det: f64, condition: f64 },

    #[error("ODE oracle did not converge within {steps} steps (last difference {difference:e})")]
    NoConvergence { steps: usize, difference: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonNoConvergence { iterations: usize, residual: f64 },

    #[error("Newton Jacobian is singular")]
    SingularJacobian,

    #[error("adaptive quadrature did not reach tolerance on [{a}, {b}]")]
    QuadratureNoConvergence { a: f64, b: f64 },

    #[error("step size {h} is outside the admissible interval")]
    StepOutOfDomain { h: f64 },

    #[error("step size must be non-zero")]
    ZeroStep,

    #[error("fixed-endpoint variation space has dimension {found}, expected {expected}")]
    DegenerateVariationSpace { found: usize, expected: usize },

    #[error("system `{system}` has no closed-form flow")]
    NoClosedForm { system: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("trajectory aborted at step {step}: {source}")]
    TrajectoryAborted {
        step: usize,
        partial: Box<TrajectoryDiscrete>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got })
        }
    }
}
