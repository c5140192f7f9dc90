use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pulse envelope is not real-valued on [{t0}, {t1}]")]
    ComplexPulse { t0: f64, t1: f64 },

    #[error("averaging window must be positive, got {0}")]
    NonpositiveWindow(f64),

    #[error("invalid pulse: {0}")]
    InvalidPulse(String),

    #[error("state vector has norm {norm}, expected 1")]
    NotNormalized { norm: f64 },

    #[error("norm drift {drift:.3e} exceeds limit {limit:.3e}")]
    NormDriftExceeded { drift: f64, limit: f64 },

    #[error("non-finite state amplitude at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("integrator step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("pump and Stokes vanish on the whole grid")]
    AllZeroPulses,

    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("detuning pulse is not purely imaginary at t = {t}")]
    DetuningNotImaginary { t: f64 },

    #[error("target cannot be reached: {0}")]
    UnreachableTarget(String),

    #[error("domain violation: {0}")]
    DomainViolation(String),

    #[error("pulse area vanishes")]
    ZeroArea,

    #[error("pulse area must be positive, got {0}")]
    NonpositiveArea(f64),

    #[error("quadrature on [{a}, {b}] did not reach tolerance (error estimate {error:.3e})")]
    QuadratureFailed { a: f64, b: f64, error: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scenario `{name}`: {source}")]
    Scenario {
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for parse and validation errors, also when wrapped in a scenario.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Scenario { source, .. } => source.is_config(),
            _ => false,
        }
    }

    /// Attaches a scenario name to an error raised while running it.
    pub fn in_scenario(self, name: &str) -> Self {
        match self {
            e @ Error::Scenario { .. } => e,
            e => Error::Scenario {
                name: name.to_string(),
                source: Box::new(e),
            },
        }
    }
}
