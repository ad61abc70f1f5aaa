use thiserror::Error;

/// Errors raised across the library.
///
/// The CLI maps `Input`-like failures to exit status 1 and
/// `Capacity`/`Numeric` failures to exit status 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("overlap violated: unit {unit} has propensity {pi} for exposure {exposure}")]
    Overlap { unit: usize, exposure: u32, pi: f64 },

    #[error("unsupported exposure: {0}")]
    UnsupportedExposure(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Capacity(_) | Error::Numeric(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
