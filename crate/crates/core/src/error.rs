//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong across the pipeline.
///
/// One flat enum keeps matching simple for CLI exit-code handling; variants
/// carry enough context to diagnose failures without a debugger.
#[derive(Debug, Error)]
pub enum Error {
    // ---- context ingestion / splitting ------------------------------------
    #[error("line {line}: expected exactly one tab separating object and attribute, got {found}")]
    MalformedLine { line: usize, found: String },

    #[error("line {line}: empty {side} identifier")]
    EmptyIdentifier { line: usize, side: &'static str },

    #[error("context has no incidences")]
    EmptyContext,

    #[error("{kind} index {index} out of range (size {size})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        size: usize,
    },

    #[error("split fraction {0} outside the open interval (0, 1)")]
    BadSplitFraction(f64),

    #[error("split fraction {fraction} of {edges} edges rounds to zero removals")]
    ZeroRemoval { fraction: f64, edges: usize },

    #[error("split fraction {fraction} would remove all {edges} edges")]
    TotalRemoval { fraction: f64, edges: usize },

    // ---- concept mining ----------------------------------------------------
    #[error("invalid size bounds: {0}")]
    InvalidBounds(String),

    #[error("brute-force enumeration limited to 20 attributes, context has {0}")]
    TooManyAttributes(usize),

    #[error("concepts file line {line}: {reason}")]
    BadConceptLine { line: usize, reason: String },

    #[error("concepts file references unknown {side} '{id}'")]
    UnknownConceptMember { side: &'static str, id: String },

    #[error("concepts file was mined from a different context (hash {found} != {expected})")]
    ContextHashMismatch { found: String, expected: String },

    #[error("identifier '{0}' contains a comma and cannot be serialized to a concepts file")]
    CommaInIdentifier(String),

    // ---- sample generation -------------------------------------------------
    #[error("corruption ratio {0} outside the open interval (0, 1)")]
    BadCorruptionRatio(f64),

    #[error("no concepts supplied; mine first or loosen the bounds")]
    NoConcepts,

    #[error("samples file: {0}")]
    BadSamplesFile(String),

    // ---- encoder -----------------------------------------------------------
    #[error("encoder config: {0}")]
    BadEncoderConfig(String),

    #[error("unknown {side} '{id}' not in model vocabulary")]
    UnknownMember { side: &'static str, id: String },

    #[error("{side} set of size {size} exceeds padded length {limit}")]
    SetTooLarge {
        side: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("non-finite value in {0}; model diverged")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("training: {0}")]
    Training(String),

    // ---- baselines / metrics -----------------------------------------------
    #[error("unknown {side} node '{id}'")]
    UnknownNode { side: &'static str, id: String },

    #[error("svd rank {rank} outside 1..={max}")]
    BadSvdRank { rank: usize, max: usize },

    #[error("metrics need at least one positive and one negative label")]
    SingleClassLabels,

    #[error("metrics: scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },

    #[error("metrics: score at position {0} is not finite")]
    NonFiniteScore(usize),

    // ---- CLI / plumbing ----------------------------------------------------
    #[error("config: {0}")]
    BadConfig(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Wrap an IO error with the path it concerns.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap a serde_json error with the file it concerns.
    pub fn json(path: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
