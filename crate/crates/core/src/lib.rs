//! Integration-free neural flow maps.
//!
//! A flow map `Φ(x, t, τ)` is learned from instantaneous velocities alone: a
//! first stage fits the network's closed-form `τ = 0` derivative to the vector
//! field, a second stage makes `∂Φ/∂τ` consistent with the network's own
//! velocity at the transported point. Euler/RK4 reference integration, FTLE,
//! streaklines and error sweeps are provided for evaluation.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod field;
pub mod grad;
pub mod lattice;
pub mod model;
pub mod oracle;
pub mod train;

mod fsutil;

pub use error::{Error, Result};
