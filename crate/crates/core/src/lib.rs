//! Stationary analysis of FCFS PH/M/c queues with deterministic impatience.
//!
//! Customers arrive according to a renewal process with phase-type
//! inter-arrival times, are served by `c` exponential servers in FCFS
//! order, and leave immediately if their waiting time would reach the
//! bound `τ`. This crate computes the stationary joint density of the
//! servers' remaining loads and the distribution of the virtual waiting
//! time (an atom at zero, a density on `(0, τ)` built from m exponential
//! modes, and the mass beyond `τ`), exposes a second matrix-exponential
//! representation of the same density for cross-validation, and ships a
//! discrete-event simulation oracle for end-to-end checks.

pub mod error;
pub mod model;
pub mod numerics;
pub mod sim;
pub mod solver;
pub mod waiting;

pub use error::{Error, Result};
