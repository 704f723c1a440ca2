//! Crate-wide error type.

use crate::model::CellId;

/// Errors surfaced by pattern mining, graph construction, scenario I/O and
/// the simulation engine. Invariant violations on model values are *data*
/// (see [`crate::model::Validate`]) and are only turned into this error by
/// entry points that refuse invalid input.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A value failed its type invariants.
    #[error("validation failed: {0:?}")]
    Validation(Vec<String>),

    /// Pattern mining was asked to work from an empty or mixed history.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Per-stay annotations do not line up with the stays mined from a pattern.
    #[error("annotation mismatch: expected {expected} stays, got {got}")]
    StayAlignment { expected: usize, got: usize },

    /// A service or request referenced a microcell that is not a graph node.
    #[error("unknown microcell {0}")]
    UnknownCell(CellId),

    /// Scenario configuration cannot produce a well-formed scenario.
    #[error("config error: {0}")]
    Config(String),

    /// A scenario or config file failed to parse.
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
