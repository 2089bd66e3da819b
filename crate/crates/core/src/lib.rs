//! Path-integral Monte Carlo laboratory for generalized Pauli-Fierz
//! semigroups with Kato-class potentials.
//!
//! The library is organized around the ingredients of the functional-integral
//! representation of the semigroup `T_t`:
//!
//! * [`paths`] — discretized Brownian paths, time integrals and Stratonovich
//!   line integrals along them;
//! * [`potentials`] — external potentials, numerical Kato-class
//!   classification, Khasminskii constants and ℰ-class decompositions;
//! * [`scattering`] — Lippmann-Schwinger generalized eigenfunctions used as
//!   variable-mass cutoff functions;
//! * [`fieldkernel`] — vacuum reduction of the quantized field to an
//!   effective pair-interaction kernel along the path;
//! * [`semigroup`] — Monte Carlo estimation of matrix elements, ground-state
//!   energies and the structural laws of `T_t`;
//! * [`decay`] — closed-form exponential decay envelopes for bound states
//!   and their pointwise verification against Monte Carlo profiles.

pub mod config;
pub mod decay;
pub mod error;
pub mod fieldkernel;
pub mod parallel;
pub mod paths;
pub mod potentials;
pub mod quad;
pub mod report;
pub mod rng;
pub mod scattering;
pub mod semigroup;

pub use error::{Error, Result};
