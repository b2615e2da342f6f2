//! Desk-scale numerics for the ideal Bose gas in a box, built on the cycle
//! representation of the canonical partition function.
//!
//! The crate computes heat kernels under Dirichlet, Neumann, periodic and
//! free boundary conditions ([`spectral`]), partition functions and
//! thermodynamic curves ([`ensemble`]), exact samples of the loop-length
//! process conditioned on the particle number ([`loops`]), the limiting laws
//! of long loops: Poisson–Dirichlet statistics, the Dickman density, and a
//! heavy-tailed local limit theorem ([`asymptotics`]), and the reduced
//! density matrix with its off-diagonal long-range order diagnostics
//! ([`rdm`]).
//!
//! All Monte Carlo entry points take an explicit seed and shard their work
//! over deterministic counter-based streams, so every experiment is
//! reproducible bit for bit.

// Frozen oracle constants keep every digit of their derivation, and the
// `!(x > 0)` guards reject NaN along with the out-of-range sign.
#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod loops;
pub mod numerics;
pub mod rdm;
pub mod report;
pub mod rng;
pub mod selftest;
pub mod spectral;

pub use error::{Error, Result};
pub use geometry::{Bc, Geometry};
