use std::fmt;

use instsearch_core::Error as CoreError;
use serde::Serialize;

/// CLI-level failure with a machine-readable kind.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

/// Body of the JSON object printed to stderr when a command fails.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: String,
    pub kind: &'static str,
}

impl ErrorReport {
    pub fn from_anyhow(err: &anyhow::Error) -> Self {
        let kind = err
            .chain()
            .find_map(|e| {
                if let Some(f) = e.downcast_ref::<Failure>() {
                    Some(f.kind)
                } else {
                    e.downcast_ref::<CoreError>().map(CoreError::kind)
                }
            })
            .or_else(|| err.chain().any(|e| e.is::<std::io::Error>()).then_some("io"))
            .unwrap_or("error");
        Self { error: format!("{err:#}"), kind }
    }
}
