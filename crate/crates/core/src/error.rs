use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by the metric core, the clustering pipeline and the
/// dataset tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("KL support violation at cluster {cluster}: p = {p}, q = 0")]
    SupportViolation { cluster: usize, p: f64 },

    #[error("invalid cost matrix: {0}")]
    InvalidCost(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("a sample of model {model} carries no log-probability")]
    MissingLogprob { model: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("model {0} has no samples in the pool")]
    NoSamplesForModel(usize),

    #[error("entailment oracle failure: {0}")]
    OracleFailure(String),

    #[error("degenerate weights: every raw factor clamped to zero")]
    DegenerateWeights,

    #[error("degenerate labels: {correct} correct, {incorrect} incorrect")]
    DegenerateLabels { correct: usize, incorrect: usize },

    #[error("invalid regime spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}:{line}: parse error: {reason}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("line {line}: schema violation in `{field}`: {reason}")]
    SchemaViolation {
        line: usize,
        field: String,
        reason: String,
    },

    #[error("{}: corrupt cache at byte {offset}: {reason}", path.display())]
    CacheParse {
        path: PathBuf,
        offset: usize,
        reason: String,
    },

    #[error("missing field `{0}`")]
    MissingField(String),

    #[error("question {0}: no correctness label")]
    MissingLabel(String),

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    /// Any error raised while processing one question.
    #[error("question {question_id}: {source}")]
    Question {
        question_id: String,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end:
    /// 1 data error, 2 configuration error, 3 oracle or transport failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Question { source, .. } => source.exit_code(),
            Error::OracleFailure(_) => 3,
            Error::Config(_) | Error::InvalidSpec(_) | Error::InvalidCost(_) => 2,
            _ => 1,
        }
    }
}

/// Attaches a path to I/O errors.
pub(crate) fn file_error(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File {
        path: path.to_path_buf(),
        source,
    }
}
