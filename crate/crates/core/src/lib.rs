//! SRPT queue simulation and heavy-traffic limit laboratory.
//!
//! The crate is split along the objects it builds:
//!
//! * [`dists`]: processing-time and inter-arrival laws, the scaling function
//!   `S(x) = 1 / E[v; v > x]`, its inverse `c^r`, and heavy-traffic rates.
//! * [`srpt`]: event-exact SRPT simulation (full, truncated, intertwined pairs).
//! * [`scalemeas`]: diffusion/space scaled measure snapshots, truncated
//!   workloads and masses, netput paths and their reflections.
//! * [`skorohod`]: the one-dimensional Skorohod map on sampled paths.
//! * [`limitfield`]: the reflected random field driven by a single Brownian
//!   motion and functionals of it (queue length, limit measure, tails).
//! * [`harness`]: Monte Carlo studies, KS comparators, the invariant ledger.

pub mod dists;
pub mod error;
pub mod format;
pub mod functions;
pub mod harness;
pub mod limitfield;
pub mod quadrature;
pub mod rng;
pub mod scalemeas;
pub mod skorohod;
pub mod srpt;

pub use error::{Error, Result};
