use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("unbalanced panel: {message} (units: {})", units.join(", "))]
    Balance { message: String, units: Vec<String> },

    #[error("parse error at row {row}, column `{column}`: cannot read `{value}` as a number")]
    Parse { row: usize, column: String, value: String },

    #[error("singular design for unit `{unit}`: regressors are not of full column rank")]
    SingularDesign { unit: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("quantile regression did not converge after {iterations} iterations (gap estimate {gap:.3e})")]
    Solver { best: Vec<f64>, gap: f64, iterations: usize },

    #[error("{failed} of {total} bootstrap replicates failed (limit is 10%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors that stem from the numbers rather than from the input layout.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularDesign { .. }
                | Error::RankDeficient(_)
                | Error::Solver { .. }
                | Error::TooManyFailures { .. }
        )
    }
}
