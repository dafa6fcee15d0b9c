use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid entity name {raw:?}: {reason}")]
    InvalidName { raw: String, reason: &'static str },

    #[error("duplicate canonical entity names: {}", .0.join(", "))]
    DuplicateName(Vec<String>),

    #[error("catalog is empty")]
    EmptyCatalog,

    #[error("token {token:?} is not in the output vocabulary")]
    OutputOov { token: String },

    #[error("token id {token} is not allowed at this cursor")]
    DisallowedToken { token: u32 },

    #[error("scorer contract violated: {0}")]
    ScorerContractViolation(String),

    #[error("no hypothesis finished within {max_tokens} tokens")]
    NoFinishedHypothesis { max_tokens: usize },

    #[error("unknown entity {0:?}")]
    UnknownEntity(String),

    #[error("example {doc_id:?} has no mention order")]
    MissingMentionOrder { doc_id: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine { path: PathBuf, line: usize, reason: String },

    #[error("{path}:{line}: I-tag without an open mention")]
    DanglingIMention { path: PathBuf, line: usize },

    #[error("record {doc_id:?}: bad field `{field}`: {reason}")]
    SchemaError { doc_id: String, field: String, reason: String },

    #[error("title {0:?} is not in the catalog")]
    TitleNotInCatalog(String),

    #[error("bad {kind} file: {reason}")]
    BadFormat { kind: &'static str, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
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
        Error::Io { path: path.into(), source }
    }

    /// Stable name of the variant, for structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidName { .. } => "invalid_name",
            Error::DuplicateName(_) => "duplicate_name",
            Error::EmptyCatalog => "empty_catalog",
            Error::OutputOov { .. } => "output_oov",
            Error::DisallowedToken { .. } => "disallowed_token",
            Error::ScorerContractViolation(_) => "scorer_contract_violation",
            Error::NoFinishedHypothesis { .. } => "no_finished_hypothesis",
            Error::UnknownEntity(_) => "unknown_entity",
            Error::MissingMentionOrder { .. } => "missing_mention_order",
            Error::EmptyDataset => "empty_dataset",
            Error::MalformedLine { .. } => "malformed_line",
            Error::DanglingIMention { .. } => "dangling_i_mention",
            Error::SchemaError { .. } => "schema_error",
            Error::TitleNotInCatalog(_) => "title_not_in_catalog",
            Error::BadFormat { .. } => "bad_format",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    /// True for errors that indicate a broken internal contract rather than bad input.
    pub fn is_contract_violation(&self) -> bool {
        matches!(
            self,
            Error::OutputOov { .. } | Error::DisallowedToken { .. } | Error::ScorerContractViolation(_)
        )
    }
}
