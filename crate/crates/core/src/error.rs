use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `c(X_{j-1}, γ)` vanished (or `c²` fell below the floor) at observation `index`.
    #[error("degenerate scale coefficient at observation {index}")]
    DegenerateScale { index: usize },

    /// The Euler recursion left the representable range at fine step `index`.
    #[error("simulation blew up at fine step {index} (state {state})")]
    SimulationBlowup { index: usize, state: f64 },

    #[error("optimization failed: {0}")]
    OptimizationFailure(String),

    #[error("numeric failure: {message} (residual estimate {residual:e})")]
    Numeric { message: String, residual: f64 },

    #[error("unsupported parameter dimension {0}")]
    UnsupportedDimension(usize),

    #[error("unknown registry name `{0}`")]
    UnknownName(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
