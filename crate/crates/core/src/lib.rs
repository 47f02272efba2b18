//! Pulse design and simulation for two-photon state preparation in a driven
//! optomechanical cavity.
//!
//! All rates are in units of the mechanical frequency (ω_m = 1), so the
//! mechanical period is `T = 2π` and a protocol block lasts `5T`.

// `!(x >= 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dissipation;
pub mod error;
pub mod expm;
pub mod fock;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod par;
pub mod propagation;
pub mod schedule;
pub mod sparse;
pub mod verify;

pub use error::{Error, Result};
