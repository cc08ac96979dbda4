use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range configuration. `key` names the offending entry.
    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    /// An argument outside the mathematical domain of an operation (for
    /// example a spectral parameter with `Im w <= 0`).
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation was called with arguments violating its contract.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The dense eigen/singular value kernel failed to converge.
    #[error("spectral kernel failed on a {dim}x{dim} matrix: {message}")]
    Spectral { dim: usize, message: String },

    /// A computed quantity contradicts an invariant that must hold exactly.
    #[error("internal consistency error: {0}")]
    InternalConsistency(String),

    /// A denominator fell below the declared guard.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// No admissible root of the self-consistent cubic was found.
    #[error("self-consistent solver failed at z={z}, w={w}: {message}")]
    SolverTolerance {
        z: num_complex::Complex64,
        w: num_complex::Complex64,
        message: String,
    },

    /// Two candidate roots are too close to continue a branch unambiguously.
    #[error("branch ambiguity at path index {index}: {message}")]
    BranchAmbiguity { index: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
