//! Dynamic user equilibrium with elastic demand on networks of point queues.
//!
//! Departure-rate profiles are piecewise constant on a uniform grid, the
//! network is loaded exactly with Vickrey point queues, and a fixed-point
//! projection iteration drives the equilibrium gap to zero. Residual checks
//! and a brute-force reference solver for tiny instances are included.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cost;
pub mod demand;
pub mod dnl;
pub mod error;
pub mod grid;
pub mod network;
pub mod oracle;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
