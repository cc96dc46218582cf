use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate control configuration: Ω² is singular (|det| = {det:e})")]
    SingularControl { det: f64 },

    #[error("CFL lock violated: v_g·dt = {advected} cm but dz = {dz} cm")]
    CflViolation { advected: f64, dz: f64 },

    #[error("non-finite field value detected at step {step}")]
    NonFinite { step: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("mass profile is not normalizable on the grid: {0}")]
    NotNormalizable(String),

    #[error("storage times collide on the dt lattice: {requested:?} µs both snap to step {step}")]
    TauCollision { requested: (f64, f64), step: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite input data: {0}")]
    NonFiniteData(String),

    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("{command}: {source}")]
    Command { command: &'static str, source: Box<Error> },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
