//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operators (or an operator and a family) disagree on the dimension
    /// of the internal space.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    /// A matrix entry is NaN or infinite.
    #[error("non-finite entry in {0}")]
    NonFinite(String),

    /// A site label or index does not belong to the family's lattice.
    #[error("unknown site {0}")]
    UnknownSite(String),

    /// The per-source Kraus condition `Σ_i B^{i*}_j B^i_j = I` fails.
    #[error(
        "Kraus normalization violated at site {site}: residual {residual:.3e} exceeds {tol:.3e}"
    )]
    KrausViolation {
        site: String,
        residual: f64,
        tol: f64,
    },

    /// A state, observable or projection fails its structural invariants.
    #[error("invalid {kind}: {reason}")]
    InvalidInput { kind: &'static str, reason: String },

    /// An operation was asked to read a site outside the support `I_ρ^c`.
    #[error("site {0} is outside the support of the state")]
    OutsideSupport(usize),

    /// An operation requires the other expectation kind.
    #[error("operation requires a {required} Markov pair")]
    WrongKind { required: &'static str },

    /// A stated precondition of a diagnostic fails (e.g. `φ(J₀(e)) = 0`
    /// under φ-recurrence, which definition (iv) excludes).
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// No invariant state was found within the requested tolerance.
    #[error("no invariant state found: {0}")]
    NoInvariantState(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Json(#[from] serde_json::Error),
}
