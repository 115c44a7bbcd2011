use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid city `{city}`: {reason}")]
    InvalidCity { city: String, reason: String },

    #[error("dangling parent: district `{district}` references `{parent}`, which is not a prefecture city in the registry")]
    DanglingParent { district: String, parent: String },

    #[error("unknown city id `{0}`")]
    UnknownCity(String),

    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    CoordinateOutOfRange { lat: f64, lon: f64 },

    #[error("registry contains no places")]
    EmptyRegistry,

    #[error("timestamp {0} is before 1970-01-01")]
    PreEpoch(i64),

    #[error("invalid quarter `{0}` (expected e.g. 2020Q1)")]
    InvalidQuarter(String),

    #[error("records span several quarters: expected {expected}, found {found}")]
    MixedQuarters { expected: String, found: String },

    #[error("graph has no edges")]
    EmptyGraph,

    #[error("increase ratio undefined: baseline value is {0}")]
    UndefinedRatio(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("keyword dictionary is empty after filtering")]
    EmptyDictionary,

    #[error("k = {k} exceeds the number of distinct vectors ({distinct})")]
    TooFewDistinctVectors { k: usize, distinct: usize },

    #[error("correlation undefined: zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("no postings for quarter {quarter}, group `{group}`")]
    EmptyGroup { quarter: String, group: String },

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("missing checkpoint {}: run stage `{stage}` first", path.display())]
    MissingCheckpoint { path: PathBuf, stage: &'static str },

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: &std::path::Path, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }
}
