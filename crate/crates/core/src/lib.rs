//! Spectator-qubit dephasing mitigation for quantum-network nodes.
//!
//! The crate is split by concern:
//!
//! * [`phase_dist`] grid-based cyclic phase distributions and Bayesian updates
//! * [`analytic`] closed-form single-spectator model and least-squares fits
//! * [`dm_sim`] density-matrix simulation of the emulated entanglement sequence
//! * [`strategy`] expected fidelity under geometric success statistics
//! * [`cli`] configuration, orchestration and CSV output for the `spectator` binary

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod cli;
pub mod dm_sim;
pub mod error;
pub mod optimize;
pub mod phase_dist;
pub mod strategy;

pub use error::{Error, Result};
