use thiserror::Error;

use crate::expr::{EvalError, ParseError};
use crate::system::HyperbolicityViolation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("hyperbolicity violated: {0}")]
    Hyperbolicity(Box<HyperbolicityViolation>),
    #[error("hyperbolicity has not been validated for this system")]
    NotValidated,
    #[error("characteristic step {step} exceeds a0/8 = {limit}")]
    StepTooLarge { step: f64, limit: f64 },
    #[error("non-periodic system needs an explicit t-window")]
    WindowUnspecified,
    #[error("dissipativity condition i={order} fails: norm {norm} >= 1")]
    DissipativityNotSatisfied { order: usize, norm: f64 },
    #[error("{what}: iteration budget {iterations} exhausted (contraction estimate {ratio:.4})")]
    IterationBudget {
        what: &'static str,
        iterations: usize,
        ratio: f64,
    },
    #[error("time step {dt} violates the one-crossing rule dt <= {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("non-finite value produced at step {step}")]
    NonFinite { step: usize },
    #[error("splitting iteration does not contract at lambda={lambda} (ratio {ratio:.4}); retry with a larger lambda")]
    ContractionFailure { lambda: f64, ratio: f64 },
    #[error("coefficients depend on t: {0}")]
    NotAutonomous(String),
    #[error("stability not established: {0}")]
    StabilityFlagAbsent(String),
    #[error("singular discretization: {0}; try refining the grid")]
    SingularDiscretization(String),
    #[error("Lyapunov functional vanished before any rate could be measured")]
    VanishingFunctional,
}

impl Error {
    /// Whether the error reports a failed mathematical condition (as opposed
    /// to bad input or a violated precondition of the caller).
    pub fn is_condition_failure(&self) -> bool {
        matches!(
            self,
            Error::Hyperbolicity(_)
                | Error::DissipativityNotSatisfied { .. }
                | Error::IterationBudget { .. }
                | Error::NonFinite { .. }
                | Error::ContractionFailure { .. }
                | Error::StabilityFlagAbsent(_)
                | Error::SingularDiscretization(_)
                | Error::VanishingFunctional
        )
    }
}
