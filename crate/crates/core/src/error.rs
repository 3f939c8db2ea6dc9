//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform; names both operands.
    #[error("dimension mismatch in {op}: {lhs} vs {rhs}")]
    DimMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// A caller-side contract was violated (bad index, missing blank entry, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The label cannot be aligned to the posterior (too few frames).
    #[error("alignment infeasible: label needs at least {needed} frames, posterior has {frames}")]
    AlignmentInfeasible { needed: usize, frames: usize },

    /// A named parameter is absent from the weight bundle.
    #[error("weight bundle is missing `{0}`")]
    MissingWeight(String),

    /// A decode method was requested without the artifacts it needs.
    #[error("configuration error for method `{method}`: {detail}")]
    Config { method: &'static str, detail: String },

    /// Malformed on-disk data; `at` carries the byte offset or line number.
    #[error("malformed {format} in {path} at {at}: {detail}")]
    Format {
        format: &'static str,
        path: String,
        at: String,
        detail: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
