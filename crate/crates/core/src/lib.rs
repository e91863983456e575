//! Solver and verifier toolkit for finite-horizon stochastic control problems
//! mixing classical controls, bounded-variation (singular) controls with finite
//! or infinite fuel, discretionary stopping and exit from a domain.
//!
//! The crate is organised bottom-up:
//!
//! * [`problem`] – problem instances, JSON loading and sanity probes.
//! * [`controls`] – grid-aligned singular controls, stopping indicators and
//!   policies written as functionals of the driving noise.
//! * [`simulate`] – noise generation and Euler–Maruyama integration.
//! * [`payoff`] – objective functionals, the `N`/`M` processes.
//! * [`solver`] – Markov-chain lattice and backward induction.
//! * [`verify`] – independent oracles and property checks.
//! * [`gallery`] – built-in benchmark instances.
//!
//! Data-parallel loops (paths, lattice slices) run on rayon when the
//! `parallel` feature is enabled and sequentially otherwise; results are
//! identical either way.

pub mod controls;
pub mod error;
pub mod gallery;
pub mod par;
pub mod payoff;
pub mod problem;
pub mod simulate;
pub mod solver;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
