//! Finite-size key lengths for high-dimensional entanglement-based QKD.
//!
//! The crate turns protocol parameters and witness statistics into secure key
//! lengths for fixed- and variable-length protocols under collective and
//! coherent attacks, and simulates witness statistics for fluctuating
//! free-space channels.

// `!(x >= 0.0)` style checks are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod entropy;
pub mod error;
pub mod keylength;
pub mod linalg;
pub mod params;
pub mod pipeline;
pub mod selftest;
pub mod statistics;
pub mod witness;

pub use error::{Error, Result};
pub use params::{
    derive_counts, g_bound, Epsilon, EpsilonBudget, LiftFactor, ProtocolParams, Regime, RoundCounts,
};
pub use witness::{Witness, WitnessSet};
