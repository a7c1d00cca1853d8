//! Black-box discrimination testing.
//!
//! A subject is any deterministic decision procedure over inputs described
//! by a [`Schema`] of categorical characteristics. The engine measures how
//! strongly its decisions depend on a subset of characteristics, either as
//! the spread of per-group acceptance rates (group discrimination) or as the
//! share of inputs whose decision changes when only those characteristics
//! change (causal discrimination), and searches for the smallest subsets
//! that reach a threshold.

pub mod cache;
pub mod cli;
pub mod engine;
pub mod error;
pub mod fixtures;
pub mod oracle;
pub mod sampler;
pub mod schema;
pub mod search;
pub mod subject;

pub use cache::{CacheStats, EvalCache};
pub use engine::{
    apparent_causal_score, apparent_group_score, causal_score, group_score, ApparentSource, Engine, GroupFrequency,
    OperationalProfile, ScoreKind, ScoreResult, TestSuite,
};
pub use error::{Error, PartialStats, Result};
pub use fixtures::{Fixture, FixtureSpec};
pub use oracle::Oracle;
pub use sampler::SamplingConfig;
pub use schema::{CharSubset, Characteristic, Input, Schema, SchemaError};
pub use search::{discrimination_search, search_with, SearchConfig, SearchKind, SearchResult};
pub use subject::{Evaluator, ProcessSubject, Subject, SubjectError};
