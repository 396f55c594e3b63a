use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what} = {value} lies outside the admissible domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: String,
    },
    #[error("function has no derivative of order {order}")]
    MissingDerivative { order: u8 },
    #[error("derivative of order {order} inconsistent with finite differences at x = {x}: supplied {supplied}, numerical {numerical}")]
    InconsistentDerivative {
        order: u8,
        x: f64,
        supplied: f64,
        numerical: f64,
    },
    #[error("Euler step from x = {x} could not be kept inside the state interval after {halvings} halvings")]
    BoundaryEscape { x: f64, halvings: u32 },
    #[error("no exit before the horizon {horizon}")]
    HorizonExceeded { horizon: f64 },
    #[error("target {target} is never reached (final value {last})")]
    TargetNotReached { target: f64, last: f64 },
    #[error("moment of order {order} diverges: need intensity {lambda} > {bound}")]
    DivergentMoment { order: f64, lambda: f64, bound: f64 },
    #[error("parameter condition violated: {0}")]
    ParameterCondition(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("singularity at x = {x}: {reason}")]
    Singularity { x: f64, reason: &'static str },
    #[error("linear solve did not converge: {0}")]
    NonConvergent(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
