use codespace_core::harness::HarnessError;
use codespace_core::merge::MergeError;
use codespace_core::metrics::MetricsError;
use codespace_core::{ConfigError, DataError, ProviderError};
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Provider,
    Data,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Provider => 3,
            ErrorKind::Data => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Provider => "provider",
            ErrorKind::Data => "data",
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    pub fn provider(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Provider,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Data,
            message: message.into(),
        }
    }

    /// One-line JSON written to stderr.
    pub fn envelope(&self) -> String {
        json!({
            "error": {
                "kind": self.kind.name(),
                "exit_code": self.kind.exit_code(),
                "message": self.message,
            }
        })
        .to_string()
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<ProviderError> for CliError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::Config(_) => CliError::config(e.to_string()),
            _ => CliError::provider(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<MergeError> for CliError {
    fn from(e: MergeError) -> Self {
        match e {
            MergeError::Config(e) => e.into(),
            MergeError::Data(e) => e.into(),
            MergeError::MissingLlm(_) => CliError::config(e.to_string()),
            MergeError::Provider { .. } => CliError::provider(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Plan(_) | HarnessError::MissingAlternateDataset(_) => CliError::config(e.to_string()),
            HarnessError::Data(e) => e.into(),
            HarnessError::Provider(e) => e.into(),
            HarnessError::TooManyFailures { .. } => CliError::provider(e.to_string()),
            HarnessError::Io { .. } => CliError::data(e.to_string()),
        }
    }
}
