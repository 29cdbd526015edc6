use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("duplicate mention id `{0}`")]
    DuplicateMention(String),

    #[error("embedding dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("feature column `{0}` already exists")]
    FeatureCollision(String),

    #[error("unknown context mention `{0}`")]
    UnknownContext(String),

    #[error("missing feature `{feature}` for ({mention}, {candidate})")]
    MissingFeature {
        feature: String,
        mention: String,
        candidate: String,
    },

    #[error("row is missing feature `{0}`")]
    MissingLeaf(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{0}")]
    Syntax(#[from] crate::ruledsl::ParseError),

    #[error("compile error: {0}")]
    Compile(String),

    #[error("training aborted: {0}")]
    Diverged(String),

    #[error("catalog mismatch, missing features: {0:?}")]
    CatalogMismatch(Vec<String>),

    #[error("lookup request failed after {attempts} attempts: {message}")]
    Lookup { attempts: u32, message: String },

    #[error("lookup response could not be parsed: {message}; body starts with {excerpt:?}")]
    LookupParse { message: String, excerpt: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
