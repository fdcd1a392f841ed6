use thiserror::Error;

/// Errors raised by the simulation, field and harness layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("site {0:?} is outside the hyperplane Z^2 x {{0}}")]
    OutsideHyperplane(Vec<i64>),

    #[error("query outside the certified simulation window: {0}")]
    OutsideWindow(String),

    #[error("operation requires {expected} mode")]
    WrongMode { expected: &'static str },

    #[error("not enough tail mass: {0}")]
    InsufficientTail(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("no crossing of survival threshold {threshold} in [{lo}, {hi}]")]
    NoCrossing { threshold: f64, lo: f64, hi: f64 },

    #[error("malformed realization dump: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
