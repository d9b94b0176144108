use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure in the library. [`Error::code`] gives the stable string code
/// that the CLI and HTTP layers expose.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown nutrient label {label:?} from {origin}")]
    UnknownNutrient { origin: String, label: String },

    #[error("{adapter} schema mismatch, missing columns: {}", missing.join(", "))]
    SchemaMismatch { adapter: String, missing: Vec<String> },

    #[error("malformed rows: {}", rows.iter().map(|(r, d)| format!("row {r}: {d}")).collect::<Vec<_>>().join("; "))]
    MalformedRows { rows: Vec<(usize, String)> },

    #[error("invalid record {key}: {reason}")]
    InvalidRecord { key: String, reason: String },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("fetch failed: {0}")]
    Fetch(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("cannot parse {text:?} at offset {offset}")]
    Parse { text: String, offset: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("no conversion from {from} to {to}{}", context.as_ref().map(|c| format!(" for {c}")).unwrap_or_default())]
    NoConversion {
        from: String,
        to: String,
        context: Option<String>,
    },

    #[error("unresolved weight for {0:?}")]
    UnresolvedWeight(String),

    #[error("rule rejected: {0}")]
    RuleRejected(String),

    #[error("model backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("invalid model output: {0}")]
    InvalidModelOutput(String),

    #[error("unparseable recipe: {0}")]
    UnparseableRecipe(String),

    #[error("no resolvable ingredient lines in recipe {0}")]
    EmptyComposition(String),

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::UnknownNutrient { .. } => "unknown-nutrient",
            Error::SchemaMismatch { .. } => "schema-mismatch",
            Error::MalformedRows { .. } => "malformed-rows",
            Error::InvalidRecord { .. } => "invalid-record",
            Error::Conflict(_) => "conflict",
            Error::Fetch(_) => "fetch-failed",
            Error::NotFound(_) => "not-found",
            Error::Parse { .. } => "parse-error",
            Error::EmptyInput => "empty-input",
            Error::NoConversion { .. } => "no-conversion",
            Error::UnresolvedWeight(_) => "unresolved-weight",
            Error::RuleRejected(_) => "rule-rejected",
            Error::BackendUnavailable(_) => "backend-unavailable",
            Error::InvalidModelOutput(_) => "invalid-model-output",
            Error::UnparseableRecipe(_) => "unparseable-recipe",
            Error::EmptyComposition(_) => "empty-composition",
            Error::InvalidProfile(_) => "invalid-profile",
            Error::Io { .. } => "io-error",
            Error::Json(_) => "invalid-json",
            Error::Csv(_) => "invalid-csv",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
