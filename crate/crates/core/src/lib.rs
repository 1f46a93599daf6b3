//! Consolidates several coders' codebooks into an aggregate code space and
//! scores every coder against it with coverage, overlap, novelty and
//! divergence.

pub mod calibrate;
pub mod error;
pub mod export;
pub mod harness;
pub mod ingest;
pub mod merge;
pub mod metrics;
pub mod model;
pub mod providers;

pub use error::{ConfigError, DataError, ProviderError};
