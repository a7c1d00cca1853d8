use thiserror::Error;

use crate::schema::SchemaError;
use crate::subject::SubjectError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Counters accumulated by an engine operation before it was interrupted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PartialStats {
    pub tests_generated: u64,
    pub cache_hits: u64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Schema(#[from] SchemaError),

    #[error(transparent)]
    Subject(#[from] SubjectError),

    #[error("subject is not deterministic: input `{input}` returned {first} then {second}")]
    Nondeterministic { input: String, first: bool, second: bool },

    #[error("{source} (after {} tests, {} cache hits)", .partial.tests_generated, .partial.cache_hits)]
    Interrupted {
        #[source]
        source: Box<Error>,
        partial: PartialStats,
    },

    #[error("search interrupted: {source}")]
    SearchInterrupted {
        #[source]
        source: Box<Error>,
        partial: Box<crate::search::SearchResult>,
    },

    #[error("test suite: {0}")]
    Suite(String),

    #[error("operational profile: {0}")]
    Profile(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what} has {size} elements, exceeding the bound of {bound}")]
    BoundExceeded {
        what: &'static str,
        size: u128,
        bound: u128,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// The error at the bottom of any `Interrupted` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Interrupted { source, .. } | Error::SearchInterrupted { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn interrupted(self, partial: PartialStats) -> Error {
        match self {
            // keep the innermost statistics
            e @ Error::Interrupted { .. } => e,
            e => Error::Interrupted {
                source: Box::new(e),
                partial,
            },
        }
    }
}
