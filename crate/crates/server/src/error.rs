use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};
use ska_core::{Error, ErrorClass};

/// A core error rendered as an HTTP response.
#[derive(Debug)]
pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

pub fn status_of(error: &Error) -> StatusCode {
    match error.class() {
        ErrorClass::Conflict => StatusCode::CONFLICT,
        ErrorClass::Validation => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorClass::Forbidden => StatusCode::FORBIDDEN,
        ErrorClass::NotFound => StatusCode::NOT_FOUND,
        ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn details(error: &Error) -> Value {
    match error {
        Error::Phase {
            round,
            expected,
            actual,
        } => json!({"round": round, "expected": expected, "actual": actual}),
        Error::Incomplete {
            round,
            annotator,
            phase,
        } => {
            json!({"round": round, "annotator": annotator, "phase": phase})
        }
        Error::LocateMismatch { expected, found } => json!({"expected": expected, "found": found}),
        Error::SpanBounds { start, end, len } => json!({"start": start, "end": end, "len": len}),
        Error::NotFound { kind, id } => json!({"kind": kind, "id": id}),
        Error::Format { line, .. } => json!({"line": line}),
        Error::Arity { expected, got } => json!({"expected": expected, "got": got}),
        Error::NotADisagreement { section, concept } => {
            json!({"section_id": section, "concept": concept})
        }
        _ => Value::Null,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_of(&self.0);
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        let mut body = json!({"code": self.0.code(), "message": self.0.to_string()});
        let extra = details(&self.0);
        if !extra.is_null() {
            body["details"] = extra;
        }
        (status, Json(json!({ "error": body }))).into_response()
    }
}
