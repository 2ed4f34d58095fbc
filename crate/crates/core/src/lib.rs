//! Model-constrained optimal experimental design (OED) for Bayesian inverse
//! problems.
//!
//! The crate is organised around the usual pipeline:
//!
//! * [`numerics`]: dense SPD kernels (Cholesky, log-determinants, masked
//!   pseudo-inverses) and randomized trace estimation.
//! * [`models`]: simulation models (a seeded linear toy model and an implicit
//!   advection–diffusion model), point observation operators and Gaussian
//!   error models.
//! * [`assimilation`]: the inverse problem itself, with a 4DVar objective,
//!   adjoint gradient, quasi-Newton MAP solver and closed-form linear-Gaussian
//!   posterior.
//! * [`oed`]: designs, design-weighted precisions, A/D criteria, sparsity
//!   penalties and the relaxed, stochastic and brute-force solvers.
//! * [`stats`]: the multivariate Bernoulli policy sampled by the stochastic
//!   solver.
//!
//! All solvers maximize a utility. Criteria that are naturally minimized
//! (posterior trace / log-determinant) are negated before they reach a solver.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assimilation;
pub mod error;
pub mod models;
pub mod numerics;
pub mod oed;
pub mod stats;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Random stream used throughout the crate.
///
/// ChaCha keeps its output stable across platforms and crate releases, which
/// the reproducibility contract relies on.
pub type Rng = rand_chacha::ChaCha8Rng;
