//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A module contract (pre/post-condition or invariant) was violated.
    #[error("contract violation in {module}::{op}: {detail}")]
    ContractViolation {
        module: &'static str,
        op: &'static str,
        detail: String,
    },

    /// Non-finite value observed in a numeric path.
    #[error("non-finite value in {op} at {location}")]
    NonFinite { op: &'static str, location: String },

    /// Malformed file content (bad magic, truncation, unparsable config).
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CoreError {
    pub fn contract(module: &'static str, op: &'static str, detail: impl Into<String>) -> Self {
        CoreError::ContractViolation {
            module,
            op,
            detail: detail.into(),
        }
    }
}
