//! Numerical laboratory for recovering a potential in the wave equation
//! from source-to-solution measurements on a small observation region,
//! via boundary-control techniques.
//!
//! The layers, bottom up:
//!
//! * [`grid`], [`region`], [`field`]: uniform grids, node masks, complex
//!   fields, trapezoid quadrature.
//! * [`potential`], [`solver`]: the explicit wave scheme on a padded box,
//!   with independent Duhamel and manufactured-solution oracles.
//! * [`lambda`]: the measurement operator, its time reversal and adjoint,
//!   operator-norm estimation, dense assembly on coarse bases.
//! * [`connect`]: the data-only recovery of interior inner products of
//!   wave snapshots (time-reversal/integration identity).
//! * [`control`]: regularized approximate-control solves, influence-domain
//!   indicators, cap sets and point-value extraction, cost-of-control
//!   sweeps.
//! * [`optics`]: localized high-frequency probe sources with amplitude
//!   transport corrections.
//! * [`recon`]: end-to-end potential reconstruction and the stability
//!   sweep harness.

pub mod basis;
pub mod connect;
pub mod control;
pub mod error;
pub mod field;
pub mod grid;
pub mod lambda;
pub mod potential;
pub mod region;
pub mod solver;

pub use error::{BcError, Result};
