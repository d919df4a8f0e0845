//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A precondition or value-range violation in library inputs.
    #[error("domain error: {0}")]
    Domain(String),

    /// Text that should contain structured data but does not.
    #[error("parse error: {0}")]
    Parse(String),

    /// Structured data that is present but fails schema or invariant checks.
    #[error("validation error: {0}")]
    Validation(String),

    /// A chat backend request that cannot succeed as issued (e.g. HTTP 4xx).
    #[error("request error: {0}")]
    Request(String),

    /// A chat backend that failed after exhausting its retry budget.
    #[error("backend error after {attempts} attempts: {message}")]
    Backend { attempts: u32, message: String },

    /// A scripted mock received a prompt no script entry matches.
    #[error("scripted backend gap: {0}")]
    ScriptGap(String),

    /// A record refers to an entity that is not present.
    #[error("referential error: {0}")]
    Referential(String),

    /// A single turn whose generation failed after the reprompt; the
    /// dialogue build skips it and continues.
    #[error("turn rejected: {0}")]
    TurnRejected(String),

    /// A whole-dialogue build that produced nothing usable.
    #[error("dialogue generation failed: {0}")]
    DialogueGeneration(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
