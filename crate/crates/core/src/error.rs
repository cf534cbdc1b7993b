use thiserror::Error;

/// Errors raised by the inference engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside the region where the object is defined.
    #[error("parameter domain error: {0}")]
    Domain(String),

    /// Malformed input: bad dimensions, unsorted nodes, empty collections.
    #[error("invalid input: {0}")]
    Input(String),

    /// A noise family that does not support the requested operation.
    #[error("unsupported noise family for {0}")]
    UnsupportedFamily(String),

    /// An operator composition that is not defined for the given operands.
    #[error("unsupported composition: {0}")]
    UnsupportedComposition(String),

    /// Parameter lookup by name failed.
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    /// Model assembly failed; the offending component is named.
    #[error("model assembly failed in {component}: {reason}")]
    Assembly { component: String, reason: String },

    /// Factorization or other numerical breakdown.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The optimizer produced non-finite parameters.
    #[error("optimization diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn assembly(component: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Assembly { component: component.into(), reason: reason.into() }
    }
}
