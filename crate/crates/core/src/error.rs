use thiserror::Error;

/// Errors raised anywhere in the forecasting stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("conjugate solver did not converge after {iterations} iterations (last alpha={alpha}, beta={beta})")]
    SolverFailure {
        iterations: usize,
        alpha: f64,
        beta: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate prior: predictor variance {0} is not positive")]
    DegeneratePrior(f64),

    #[error("observation {observed} outside family support: {reason}")]
    Support { observed: f64, reason: String },

    #[error("invalid day decomposition: {0}")]
    InvalidDay(String),

    #[error("missing covariate `{0}`")]
    MissingCovariate(String),

    #[error("operation not available in {0} excess mode")]
    ExcessMode(&'static str),

    #[error("no simulated path is free of excess over the horizon ({paths} paths); increase the path count")]
    NoRetainedPaths { paths: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
