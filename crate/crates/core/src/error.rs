use thiserror::Error;

/// Problems with input data: malformed files, violated invariants.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("codebook `{0}` has no codes")]
    EmptyCodebook(String),
    #[error("code #{index} of codebook `{coder}` has an empty label")]
    EmptyLabel { coder: String, index: usize },
    #[error("code `{label}` of codebook `{coder}` references unknown example id `{id}`")]
    UnknownExample {
        coder: String,
        label: String,
        id: String,
    },
    #[error("duplicate segment id `{0}` in dataset")]
    DuplicateSegment(String),
    #[error("duplicate coder id `{0}`")]
    DuplicateCoder(String),
    #[error("at least 2 codebooks are required, got {0}")]
    TooFewCodebooks(usize),
    #[error("group codebook `{0}` cannot take part in merging")]
    GroupInUnion(String),
    #[error("group `{0}` has no members")]
    EmptyGroup(String),
    #[error("unknown coder `{0}`")]
    UnknownCoder(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn from_json(err: serde_json::Error) -> Self {
        DataError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// Failures of embedding or language-model backends.
#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider `{provider}` transport failure after {attempts} attempt(s): {message}")]
    Transport {
        provider: String,
        attempts: u32,
        message: String,
        /// The texts or prompt that failed.
        batch: Vec<String>,
    },
    #[error("provider `{provider}` returned an unusable response: {message}")]
    BadResponse { provider: String, message: String },
    #[error("provider `{provider}` returned an empty output")]
    EmptyOutput { provider: String },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot embed an empty text")]
    EmptyText,
    #[error("provider `{provider}` does not support {operation}")]
    Unsupported { provider: String, operation: String },
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error("embedding cache at {path}: {message}")]
    Cache { path: String, message: String },
}

/// Invalid configuration values.
#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("thresholds must satisfy 0 < lower ({lower}) <= strict ({strict}) <= upper ({upper}) < 2")]
    Thresholds { lower: f64, strict: f64, upper: f64 },
    #[error("penalty must be >= 0, got {0}")]
    Penalty(f64),
    #[error("max_stage4_iterations must be >= 1")]
    Iterations,
    #[error("neighbor_band_upper ({band}) must lie in [strict, 2)")]
    NeighborBand { band: f64 },
    #[error("{0}")]
    Other(String),
}
