use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// File content does not follow the expected layout.
    #[error("malformed file: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A precondition on the arguments was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient bearings: {informative} informative estimate(s), need at least 2")]
    InsufficientBearings { informative: usize },

    #[error("no information: all bearing concentrations are zero")]
    NoInformation,

    #[error("no valid angle: normalized root phase {0} lies outside [-1, 1]")]
    NoValidAngle(f64),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    /// Training or a numerical routine produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
