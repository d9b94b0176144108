use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thali_core::Error;

/// Error body shared by the HTTP service and `--json` CLI output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub details: Map<String, Value>,
}

/// Every error code with its HTTP status.
pub const ERROR_CODES: &[(&str, u16)] = &[
    ("invalid-argument", 400),
    ("invalid-body", 400),
    ("invalid-json", 400),
    ("invalid-csv", 400),
    ("invalid-profile", 400),
    ("invalid-record", 400),
    ("empty-input", 400),
    ("parse-error", 400),
    ("schema-mismatch", 400),
    ("malformed-rows", 400),
    ("not-found", 404),
    ("conflict", 409),
    ("unknown-nutrient", 422),
    ("no-conversion", 422),
    ("unresolved-weight", 422),
    ("rule-rejected", 422),
    ("invalid-model-output", 422),
    ("unparseable-recipe", 422),
    ("empty-composition", 422),
    ("backend-unavailable", 503),
    ("fetch-failed", 503),
    ("io-error", 500),
    ("internal", 500),
];

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        ApiError {
            code: code.to_string(),
            message: message.into(),
            details: Map::new(),
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        if let Value::Object(m) = details {
            self.details = m;
        }
        self
    }

    pub fn status(&self) -> u16 {
        ERROR_CODES
            .iter()
            .find(|(c, _)| *c == self.code)
            .map(|(_, s)| *s)
            .unwrap_or(500)
    }

    pub fn bad_body(message: impl Into<String>) -> Self {
        ApiError::new("invalid-body", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new("internal", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let details = match &e {
            Error::SchemaMismatch { adapter, missing } => json!({ "adapter": adapter, "missing": missing }),
            Error::MalformedRows { rows } => json!({
                "rows": rows.iter().map(|(r, d)| json!({ "row": r, "reason": d })).collect::<Vec<_>>()
            }),
            Error::UnknownNutrient { origin, label } => json!({ "origin": origin, "label": label }),
            Error::NoConversion { from, to, context } => json!({ "from": from, "to": to, "context": context }),
            Error::Parse { text, offset } => json!({ "text": text, "offset": offset }),
            Error::InvalidRecord { key, .. } => json!({ "key": key }),
            Error::Io { path, .. } => json!({ "path": path.display().to_string() }),
            _ => Value::Null,
        };
        ApiError::new(e.code(), e.to_string()).with_details(details)
    }
}

impl From<serde_json::Error> for ApiError {
    fn from(e: serde_json::Error) -> Self {
        ApiError::from(Error::Json(e))
    }
}
