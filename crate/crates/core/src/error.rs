use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid event code {0:?}")]
    InvalidCode(String),

    #[error("level {level} out of range for code {code:?}")]
    LevelOutOfRange { code: String, level: usize },

    #[error("drug {0:?} has no family mapping")]
    UnmappedDrug(String),

    #[error("family code {family:?} has fewer than {depth} segments")]
    FamilyTooShallow { family: String, depth: usize },

    #[error("{file}: row {row}: unknown patient id {patient_id:?}")]
    UnknownPatient {
        file: String,
        row: usize,
        patient_id: String,
    },

    #[error("{file}: row {row}: {message}")]
    Parse {
        file: String,
        row: usize,
        message: String,
    },

    #[error("date {date} precedes birth date {birth}")]
    BeforeBirth { date: String, birth: String },

    #[error("unknown patient {0:?}")]
    NoSuchPatient(String),

    #[error("merge conflict: {0}")]
    MergeConflict(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(file: &str, row: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.to_string(),
            row,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }

    /// True for errors caused by the input data rather than by usage.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Config(_) | Error::DegenerateLabels(_))
    }
}
