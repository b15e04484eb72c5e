use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("waveform too short: {samples} samples, need at least {needed}")]
    TooShort { samples: usize, needed: usize },
    #[error("noise signal has zero power")]
    DegenerateNoise,
    #[error("impulse response is all zeros")]
    DegenerateRir,
    #[error("invalid speed factor {0}")]
    InvalidFactor(f64),
    #[error("augmentation plan incomplete: {0}")]
    IncompletePlan(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("need at least 2 time steps for standard deviation pooling, got {0}")]
    DegenerateTime(usize),
    #[error("checkpoint does not match configuration: {0}")]
    CheckpointMismatch(String),
    #[error("label {label} out of range for {n_classes} classes")]
    Label { label: usize, n_classes: usize },
    #[error("zero-norm or unnormalized vector: {0}")]
    Norm(String),
    #[error("all loss components are empty")]
    EmptyBatch,
    #[error("too few points: {count} points for k = {k}")]
    TooFewPoints { count: usize, k: usize },
    #[error("empty result: {0}")]
    EmptyResult(String),
    #[error("unknown utterance `{0}`")]
    UnknownUtterance(String),
    #[error("not enough data: {0}")]
    NotEnoughData(String),
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("score sets are not aligned: {0}")]
    Alignment(String),
    #[error("empty data: {0}")]
    EmptyData(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code for the command-line front end:
    /// 2 for I/O, 3 for format or configuration, 4 for data or precondition failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Parse { .. }
            | Error::UnsupportedFormat(_)
            | Error::Format(_)
            | Error::CorruptFile(_)
            | Error::Config(_)
            | Error::CheckpointMismatch(_)
            | Error::IncompletePlan(_)
            | Error::DuplicateId(_) => 3,
            _ => 4,
        }
    }
}
