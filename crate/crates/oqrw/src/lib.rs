//! Open quantum random walks on finite site sets, the quantum Markov chains
//! they generate, and recurrence / accessibility diagnostics.
//!
//! The crate is organized around five pieces:
//!
//! * [`walk`] — transition operator families `{B^i_j}` with Kraus validation
//!   and builders for nearest-neighbor ring walks and the standard two-site
//!   walk.
//! * [`evolution`] — block density matrices and the completely positive map
//!   `ρ'_i = Σ_j B^i_j ρ_j B^{i*}_j`, its adjoint, and invariant-state
//!   solvers.
//! * [`qmc`] — Kraus pairs `K_ij`, forward and dual transition expectations,
//!   and quantum Markov chain functionals evaluated both by generic nested
//!   recursion and by closed product formulas.
//! * [`recurrence`] — stopping-time expectations and verdicts for the four
//!   recurrence / complete-accessibility criteria.
//! * [`io`] — JSON file formats for walks, states and observables, plus CSV
//!   emission helpers.
//!
//! All numerics are generic over the real scalar type through [`Scalar`];
//! the `*64` aliases at the crate root fix `f64`, which is what the CLI and
//! the test suites use.

pub mod error;
pub mod evolution;
pub mod io;
pub mod linalg;
pub mod observable;
pub mod qmc;
pub mod random;
pub mod recurrence;
pub mod scalar;
pub mod walk;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` aliases for the main domain types.
pub type TransitionFamily64 = walk::TransitionFamily<f64>;
pub type BlockState64 = evolution::BlockState<f64>;
pub type BlockObservable64 = observable::BlockObservable<f64>;
pub type BlockProjection64 = observable::BlockProjection<f64>;
pub type KrausFamily64 = qmc::KrausFamily<f64>;
pub type MarkovPair64 = qmc::MarkovPair<f64>;
pub type RecurrenceVerdict64 = recurrence::RecurrenceVerdict<f64>;

/// `f32` aliases; usable, but the library's default tolerances are chosen
/// for `f64` and must be loosened explicitly for single precision.
pub type TransitionFamily32 = walk::TransitionFamily<f32>;
pub type BlockState32 = evolution::BlockState<f32>;
pub type BlockObservable32 = observable::BlockObservable<f32>;
pub type BlockProjection32 = observable::BlockProjection<f32>;
