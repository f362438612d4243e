use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Not enough observations for the requested fit.
    #[error("insufficient sample: {0}")]
    InsufficientSample(String),

    /// A matrix that must be inverted or factored is (numerically) singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Mismatched dimensions between inputs.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid argument or malformed input data.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Order or rank condition for identification fails.
    #[error("identification failure: {0}")]
    Identification(String),

    /// Iterative optimizer did not reach the gradient tolerance.
    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),

    /// Non-finite values or other numerical breakdown.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Bad run configuration (CLI / scenario files).
    #[error("config error: {0}")]
    Config(String),

    /// An error from a downstream stage, labeled with the stage that failed.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
