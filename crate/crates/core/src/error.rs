use thiserror::Error;

use crate::dynamics::State;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent system / channel / option combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// A physical or numerical argument outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration diverged at tau = {tau}; last valid state ({}, {})", last.x, last.v)]
    Diverged { tau: f64, last: State },

    #[error("event localization failed at tau = {tau} after {iterations} bisection steps")]
    EventLocalization { tau: f64, iterations: usize },

    #[error("no periodic orbit: Newton stopped after {iterations} iterations with residual {residual:e}")]
    NoOrbit { iterations: usize, residual: f64 },

    #[error("invalid bracket: {0}")]
    InvalidBracket(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
