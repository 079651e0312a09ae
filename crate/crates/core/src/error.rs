use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error on line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("variable `{variable}`: {message}")]
    Contradiction { variable: String, message: String },

    #[error("unsupported model feature: {0}")]
    Unsupported(String),

    #[error("dataset has no column for variable `{0}`")]
    MissingColumn(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("matrix (I - B) is singular at the current parameters")]
    SingularStructure,

    #[error("sample covariance matrix is singular")]
    SingularSample,

    #[error("model-implied covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("parameter vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },

    #[error("objectives differ: {0}")]
    ObjectiveMismatch(String),

    #[error("generator: {0}")]
    Generator(String),

    #[error("unknown {what} `{name}`")]
    UnknownName { what: &'static str, name: String },

    #[error("delta: {0}")]
    Delta(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors that mean the objective is undefined at the requested point.
    pub fn is_domain(&self) -> bool {
        matches!(
            self,
            Error::SingularStructure | Error::NotPositiveDefinite | Error::SingularSample
        )
    }
}
