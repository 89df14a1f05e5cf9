use thiserror::Error;

use crate::graph::PenmanError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("token stream does not match the reference text at character {offset}")]
    StreamMismatch { offset: usize },
    #[error("token {index} (`{token}`) carries a word-boundary marker on a continuation")]
    MarkerInconsistency { index: usize, token: String },
    #[error("malformed token sequence at {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("word index {index} out of range for {len} words")]
    WordOutOfRange { index: usize, len: usize },
    #[error("span file line does not match the sentence: {0}")]
    SpanMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("unknown container version `{0}`")]
    UnknownVersion(String),
    #[error("unsupported dtype `{0}`")]
    UnsupportedDtype(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value at ({row}, {col}) in layer {layer} head {head}")]
    NonFinite { layer: usize, head: usize, row: usize, col: usize },
    #[error("row {row} sums to {sum}, expected 1 for a normalized matrix")]
    NotNormalized { row: usize, sum: f64 },
    #[error("missing payload for layer {layer} head {head}")]
    MissingPayload { layer: usize, head: usize },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("empty selection: {0}")]
    EmptySelection(String),
    #[error("head subset mismatch: {0}")]
    HeadMismatch(String),
    #[error(transparent)]
    Token(#[from] TokenError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("sentence sets differ: {0}")]
    SentenceMismatch(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("correlation undefined: {0} vector is constant")]
    ConstantVector(&'static str),
    #[error("no nonzero differences")]
    NoNonzeroDifferences,
    #[error("too few nonzero differences: {0} (need at least {1})")]
    TooFewDifferences(usize, usize),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("no supervised decoder positions")]
    NoSupervisedRows,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("finite-difference step {0} outside [1e-6, 1e-3]")]
    StepOutOfRange(f64),
    #[error("empty dataset")]
    EmptyDataset,
}

/// Umbrella error for corpus-level operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Penman(#[from] PenmanError),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Input(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
