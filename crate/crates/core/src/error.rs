use thiserror::Error;

/// Errors raised by the filtering and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("non-finite drift at t={time}: state {state:?}")]
    NonFiniteDrift { time: f64, state: Vec<f64> },

    #[error("non-finite update for particle {index} at t={time}")]
    NonFiniteParticle { index: usize, time: f64 },

    #[error("bearing undefined: target coincides with sensor {sensor}")]
    BearingUndefined { sensor: usize },

    #[error("galerkin system is singular (condition estimate {condition:e})")]
    SingularGain { condition: f64 },

    #[error("too many targets for exact joint association: {0} > {max}", max = crate::jpda::MAX_TARGETS)]
    TooManyTargets(usize),

    #[error("grid density has mass {mass:e} at the boundary")]
    GridBoundary { mass: f64 },

    #[error("misaligned run records: {0}")]
    Misaligned(String),
}

pub type Result<T> = std::result::Result<T, Error>;
