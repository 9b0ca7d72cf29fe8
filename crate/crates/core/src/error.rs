//! Crate-wide error type.

use alloc::string::String;

/// Errors surfaced by the library.
///
/// Operations whose domain is fully validated by their callers use plain
/// return values and assert their preconditions instead.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Matrix/vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// An input value is outside the operation's domain (NaN/Inf, empty
    /// collection, out-of-range label, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A configuration value violates its invariants.
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    /// Class priors are unusable (zero or negative entries).
    #[error("invalid priors: {0}")]
    InvalidPriors(String),
    /// A data split does not satisfy a method's requirements.
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    /// An index is out of range for the addressed collection.
    #[error("index out of range: {0}")]
    Index(String),
    /// Training produced a non-finite loss or parameter.
    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        message: String,
    },
    /// An adversarial inner optimization produced a non-finite gradient.
    #[error("attack failure: {0}")]
    AttackFailure(String),
    /// The finite-difference oracle evaluated the target to a non-finite value.
    #[error("oracle failure: {0}")]
    OracleFailure(String),
    /// A noise scheme was applied to an incompatible label space.
    #[error("scheme mismatch: {0}")]
    SchemeMismatch(String),
    /// A compensation (target, granularity) pair has no backing term.
    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),
}
