//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use chrono::NaiveDate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {context}: {message}")]
    Csv { context: String, message: String },

    #[error("malformed date {value:?} in {context}")]
    MalformedDate { value: String, context: String },

    #[error("non-numeric value {value:?} in {context} at row {row}, column {column:?}")]
    NonNumeric {
        context: String,
        row: usize,
        column: String,
        value: String,
    },

    #[error("duplicate {kind} key {key:?}")]
    DuplicateKey { kind: &'static str, key: String },

    #[error("header mismatch: {0}")]
    HeaderMismatch(String),

    #[error("time index is not weekly: {prev} followed by {next}")]
    NotWeekly { prev: NaiveDate, next: NaiveDate },

    #[error("series {series} missing {week}")]
    MissingWeek { series: String, week: NaiveDate },

    #[error("dimension mismatch for {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("insufficient data for {context}: need at least {required}, got {actual}")]
    InsufficientData {
        context: String,
        required: usize,
        actual: usize,
    },

    #[error("degenerate series: {0}")]
    Degenerate(String),

    #[error("rank deficient design in {context}: rank {rank} < columns {columns}")]
    RankDeficient {
        context: String,
        rank: usize,
        columns: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("source {locator} unreachable: {message}")]
    Unreachable { locator: String, message: String },

    #[error("schema drift in {locator} at row {row}: {message}")]
    SchemaDrift {
        locator: String,
        row: usize,
        message: String,
    },

    #[error("empty payload from {locator}")]
    EmptyPayload { locator: String },

    #[error("offline mode with cold cache for source {source_kind} ({locator})")]
    OfflineColdCache { source_kind: String, locator: String },

    #[error("cannot form factor {factor} in week {week}: {message}")]
    FactorFormation {
        factor: String,
        week: NaiveDate,
        message: String,
    },

    #[error("bootstrap produced no successful replications")]
    NoSuccessfulDraws,

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(context: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Error::Csv {
            context: context.into(),
            message: err.to_string(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorClass::Config,
            Error::Degenerate(_) | Error::RankDeficient { .. } | Error::NonFinite(_) | Error::NoSuccessfulDraws => {
                ErrorClass::Numerical
            }
            Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}
