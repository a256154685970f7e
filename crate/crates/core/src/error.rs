use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A scalar argument or configuration field is out of its domain.
    InvalidArgument(String),
    /// Two tensors (or a tensor and an operator) disagree on shape.
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    /// Division by a quantity that is zero at the requested point, e.g. `1/sigma_0`.
    DivisionDomain(&'static str),
    /// The requested operation is not available for this model kind.
    Unsupported(&'static str),
    /// An iterate became non-finite.
    NumericalFailure {
        outer_step: Option<usize>,
        iteration: usize,
    },
    /// The CG line search denominator vanished.
    DegenerateDirection { iteration: usize },
    /// Failure reported by an external data-prediction model.
    External(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(expected: &[usize], found: &[usize]) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }

    /// Attach the outer sampler step to a numerical failure.
    pub fn at_outer_step(self, step: usize) -> Self {
        match self {
            Error::NumericalFailure { iteration, .. } => Error::NumericalFailure {
                outer_step: Some(step),
                iteration,
            },
            other => other,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::ShapeMismatch { expected, found } => {
                write!(f, "shape mismatch: expected {expected:?}, found {found:?}")
            }
            Error::DivisionDomain(what) => write!(f, "division domain error: {what}"),
            Error::Unsupported(what) => write!(f, "unsupported operation: {what}"),
            Error::NumericalFailure {
                outer_step: Some(step),
                iteration,
            } => write!(
                f,
                "non-finite iterate at outer step {step}, inner iteration {iteration}"
            ),
            Error::NumericalFailure {
                outer_step: None,
                iteration,
            } => write!(f, "non-finite iterate at inner iteration {iteration}"),
            Error::DegenerateDirection { iteration } => {
                write!(f, "degenerate search direction at iteration {iteration}")
            }
            Error::External(msg) => write!(f, "external model: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
