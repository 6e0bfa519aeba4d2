use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("EDF parse error at byte {offset}: {message}")]
    EdfParse { offset: usize, message: String },

    #[error("unsupported EDF layout: {0}")]
    UnsupportedFormat(String),

    #[error("invalid calibration for signal '{label}': digital_max {digital_max} <= digital_min {digital_min}")]
    InvalidCalibration {
        label: String,
        digital_min: i32,
        digital_max: i32,
    },

    #[error("physical value {value} on channel '{label}' lies outside calibrated range [{min}, {max}]")]
    Range {
        label: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("hypnogram line {line}: unknown stage token '{token}'")]
    UnknownStage { line: usize, token: String },

    #[error("hypnogram parse error at line {line}: {message}")]
    HypnogramParse { line: usize, message: String },

    #[error("hypnogram validation failed: {0}")]
    HypnogramValidation(String),

    #[error("no sleep-stage annotation found in hypnogram")]
    EmptySleep,

    #[error("invalid configuration field '{field}': {message}")]
    Config { field: String, message: String },

    #[error("shape contract violated: {0}")]
    Shape(String),

    #[error("non-finite values in {location}")]
    NumericFailure { location: String },

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Diverged {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
