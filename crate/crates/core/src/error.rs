use core::fmt;

/// Errors raised by the pure simulation and synthesis layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A state, input or parameter was NaN or infinite.
    NonFinite(&'static str),
    /// A parameter set violated one of its invariants.
    InvalidParams(&'static str),
    /// A mapping or controller configuration violated one of its invariants.
    InvalidConfig(&'static str),
    /// Integration step outside the supported range.
    InvalidTimestep(f64),
    /// Riccati iteration did not reach the tolerance within the iteration cap.
    NotConverged { iterations: usize, last_change: f64 },
    /// Matrix that must be invertible was singular.
    Singular(&'static str),
    /// Q or R failed the symmetry/definiteness check.
    InvalidWeights(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::InvalidParams(why) => write!(f, "invalid robot parameters: {why}"),
            Error::InvalidConfig(why) => write!(f, "invalid configuration: {why}"),
            Error::InvalidTimestep(dt) => write!(f, "timestep {dt} s outside (0, 0.005]"),
            Error::NotConverged { iterations, last_change } => write!(
                f,
                "Riccati iteration did not converge after {iterations} iterations (last change {last_change:e})"
            ),
            Error::Singular(what) => write!(f, "singular matrix: {what}"),
            Error::InvalidWeights(why) => write!(f, "invalid cost weights: {why}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
