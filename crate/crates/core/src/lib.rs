//! Numerical laboratory for the spectra of products of independent
//! non-Hermitian random matrices.
//!
//! The crate is organised bottom-up:
//!
//! * [`ensembles`] samples factor chains and builds the cyclic block
//!   linearization `X` whose `n`-th power carries the product spectrum.
//! * [`spectral`] wraps a dense eigen/singular value kernel and computes
//!   hermitized spectra of `(X - z)^*(X - z)`.
//! * [`selfconsistent`] solves the limiting self-consistent equation for
//!   `m_c(z, w)` and exposes the support edges and density of its measure.
//! * [`resolvent`] builds resolvents of `Y^*Y` and `YY^*` (with row/column
//!   minors) and evaluates the exact algebraic identities between them.
//! * [`gamma`] assembles the linearized stability system around `m_c`.
//! * [`experiments`] runs reproducible Monte Carlo sweeps on top of all of
//!   the above, and [`cli`] serializes their results.

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity, clippy::field_reassign_with_default)]

pub mod cli;
pub mod complex;
pub mod ensembles;
mod error;
pub mod experiments;
pub mod gamma;
pub mod resolvent;
pub mod selfconsistent;
pub mod spectral;

pub use error::{Error, Result};
pub use faer::Mat;
pub use num_complex::Complex64 as C64;
