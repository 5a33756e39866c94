use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A predictor or metric has no meaningful value for this input.
    ///
    /// This is an expected outcome (e.g. a query with no in-vocabulary terms)
    /// and callers skip the record instead of coercing it to zero.
    #[error("undefined: {0}")]
    Undefined(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),

    #[error("unknown document id `{0}`")]
    UnknownDocId(String),

    #[error("no text available for document `{0}`")]
    MissingDocText(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid record {record}: field `{field}`: {message}")]
    InvalidRecord {
        record: String,
        field: String,
        message: String,
    },

    #[error("missing true score for need `{need}`, variant `{variant}`, metric `{metric}`")]
    MissingTruth {
        need: String,
        variant: String,
        metric: String,
    },

    #[error("unknown {kind} `{name}`; valid names: {valid}")]
    UnknownName {
        kind: &'static str,
        name: String,
        valid: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn is_undefined(&self) -> bool {
        matches!(self, Error::Undefined(_))
    }

    pub(crate) fn undefined(reason: impl Into<String>) -> Self {
        Error::Undefined(reason.into())
    }

    pub(crate) fn param(reason: impl Into<String>) -> Self {
        Error::InvalidParameter(reason.into())
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (names, parameters) rather
    /// than bad data files.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_) | Error::UnknownName { .. } | Error::Config(_)
        )
    }
}
