use thiserror::Error;

/// Errors raised by the spectral, control and simulation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid {name}: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error(
        "grid of {n_grid} points is too coarse for {n_modes} modes (need at least {required})"
    )]
    GridTooCoarse {
        n_grid: usize,
        n_modes: usize,
        required: usize,
    },

    #[error("heat semigroup evaluated at negative time {0}")]
    NegativeTime(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("time {t} lies outside the control window ({start}, {end}]")]
    OutsideWindow { t: f64, start: f64, end: f64 },

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error(
        "impulse interval {index} ({start}, {end}]: fixed-point iteration failed at t = {t} \
         (residual {residual:e} after {iterations} iterations)"
    )]
    ImpulseDivergence {
        index: usize,
        start: f64,
        end: f64,
        t: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("state became non-finite at t = {t}")]
    BlowUp { t: f64 },

    #[error("delay lookup at t = {t} precedes the history window [-{delay}, 0]")]
    BeforeHistory { t: f64, delay: f64 },

    #[error("delay lookup at t = {t} is beyond the last computed time {last}")]
    NotYetComputed { t: f64, last: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}
