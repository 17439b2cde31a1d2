use thiserror::Error;

use crate::protocol::RoundPhase;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure a workbench operation can surface.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input: the document contains no text")]
    EmptyInput,

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("invalid surface {0:?}: a concept needs at least one non-whitespace character")]
    InvalidSurface(String),

    #[error("span [{start}, {end}) is out of bounds for a section of {len} characters")]
    SpanBounds {
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("annotator {0} is not qualified")]
    Unqualified(String),

    #[error("arity error: expected {expected} participants, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("phase error: round {round} is in phase {actual}, operation requires {expected}")]
    Phase {
        round: String,
        expected: RoundPhase,
        actual: RoundPhase,
    },

    #[error("not authorized: {0}")]
    Authorization(String),

    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },

    #[error("incomplete data: annotator {annotator} has not submitted the {phase} phase of round {round}")]
    Incomplete {
        round: String,
        annotator: String,
        phase: RoundPhase,
    },

    #[error("locate mismatch: span text {found:?} does not normalize to concept {expected:?}")]
    LocateMismatch { expected: String, found: String },

    #[error("({section}, {concept:?}) is not a disagreement case")]
    NotADisagreement { section: String, concept: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("unsupported format version {0:?}")]
    Version(String),

    #[error("percentage of an empty total is undefined")]
    DivisionDomain,

    #[error("no closed rounds in the selected range")]
    EmptyRange,

    #[error("i/o error: {0}")]
    Io(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

/// Coarse classification used by transports (HTTP status, CLI exit code).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Conflict,
    Validation,
    Forbidden,
    NotFound,
    Internal,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Phase { .. }
            | Error::Conflict(_)
            | Error::Incomplete { .. }
            | Error::EmptyRange => ErrorClass::Conflict,
            Error::Unqualified(_) | Error::Authorization(_) => ErrorClass::Forbidden,
            Error::NotFound { .. } => ErrorClass::NotFound,
            Error::Io(_) => ErrorClass::Internal,
            _ => ErrorClass::Validation,
        }
    }

    /// Stable snake_case name of the variant, for machine-readable bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyInput => "empty_input",
            Error::Format { .. } => "format",
            Error::InvalidSurface(_) => "invalid_surface",
            Error::SpanBounds { .. } => "span_bounds",
            Error::Unqualified(_) => "unqualified",
            Error::Arity { .. } => "arity",
            Error::Conflict(_) => "conflict",
            Error::Phase { .. } => "phase",
            Error::Authorization(_) => "authorization",
            Error::NotFound { .. } => "not_found",
            Error::Incomplete { .. } => "incomplete",
            Error::LocateMismatch { .. } => "locate_mismatch",
            Error::NotADisagreement { .. } => "not_a_disagreement",
            Error::Validation(_) => "validation",
            Error::Integrity(_) => "integrity",
            Error::Version(_) => "version",
            Error::DivisionDomain => "division_domain",
            Error::EmptyRange => "empty_range",
            Error::Io(_) => "io",
            Error::Serde(_) => "serde",
        }
    }

    pub(crate) fn not_found(kind: &'static str, id: impl std::fmt::Display) -> Self {
        Error::NotFound {
            kind,
            id: id.to_string(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
