use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record could not be parsed at all.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A record parsed but violates a data invariant.
    #[error("{location}dialogue `{dialogue}`: {field}: {message}")]
    Invalid {
        location: Location,
        dialogue: String,
        field: String,
        message: String,
    },

    #[error("dialogue `{0}` has neither `score` nor `item_scores`")]
    MissingScore(String),

    #[error("empty score list")]
    EmptyScores,

    #[error("dialogue `{0}` has no segments and no declared session duration")]
    EmptyDialogue(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file line {line}: {message}")]
    Model { line: usize, message: String },

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u64,
        expected: u64,
    },

    #[error("enumeration over {0} features exceeds the limit of {max}", max = crate::shapley::MAX_FEATURES)]
    TooManyFeatures(usize),

    #[error("{0}")]
    Csv(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(
        line: Option<usize>,
        dialogue: &str,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Invalid {
            location: Location(line),
            dialogue: dialogue.to_owned(),
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Optional line number prefix for validation errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location(pub Option<usize>);

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.0 {
            Some(line) => write!(f, "line {line}: "),
            None => Ok(()),
        }
    }
}
