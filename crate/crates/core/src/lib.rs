//! Dimension-theoretic estimators for sampled stochastic processes and a
//! small compressed-sensing laboratory built around them.
//!
//! The crate is organized as a pipeline:
//!
//! * [`proc_gen`] samples finite blocks `X^n = (X_1, ..., X_n)` from a family
//!   of stationary source models (mixed discrete-continuous i.i.d. sources,
//!   stationary Gaussians, Markov chains, binary-digit constructions).
//! * [`dimension`] quantizes blocks on the lattice `floor(k x) / k` and turns
//!   plug-in entropies `H([X^n]_k)` into information-dimension estimates, and
//!   ball/cell masses into local-dimension estimates.
//! * [`energy`] computes s-energies `E_s = mean |x_i - x_j|^{-s}` of sample
//!   clouds in a log2 domain, their normalized growth rates in `n`, and the
//!   gamma-function bounds used to control unit-ball volumes.
//! * [`sensing`] samples Gaussian measurement matrices, audits their
//!   small-ball and operator-norm behavior, and decodes linear measurements
//!   by entropy minimization or sparse support enumeration.
//! * [`experiments`] drives recovery phase diagrams, threshold detection, and
//!   the cross-module consistency reports.
//!
//! All randomness flows through [`seeding`]: one master seed plus a purpose
//! label and an index determine every stream, so identical inputs reproduce
//! identical outputs byte for byte regardless of thread count.

pub mod dimension;
pub mod energy;
mod error;
pub mod experiments;
pub mod io;
mod linalg;
pub mod proc_gen;
pub mod seeding;
pub mod sensing;
pub mod stats;

pub use error::{Error, Result};
