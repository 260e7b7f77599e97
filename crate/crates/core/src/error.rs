//! Error type shared across the crate.

use thiserror::Error;

/// Errors surfaced by mesh, state, Hamiltonian and driver operations.
///
/// `Contract` marks violations of documented call contracts (mismatched
/// layouts, overlapping swap pairs, ...); these indicate caller bugs but are
/// reported as errors rather than panics so drivers can surface them cleanly.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (non-power-of-two mesh, too few local qubits, …).
    #[error("configuration error: {0}")]
    Config(String),

    /// A documented call contract was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A Hamiltonian term that the blocking compiler cannot handle.
    #[error("unsupported term: {0}")]
    UnsupportedTerm(String),

    /// Operation refused because it would exceed a resource cap.
    #[error("refused: {0}")]
    Refused(String),

    /// Malformed checkpoint or Hamiltonian file.
    #[error("format error: {0}")]
    Format(String),

    /// A numerically invalid intermediate (purity out of range, complex
    /// energy, …).
    #[error("numerical validity error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
