//! Finite-key analysis for twin-field QKD without phase postselection.

pub mod channel;
pub mod config;
pub mod decoy;
pub mod dominance;
pub mod error;
pub mod fock;
pub mod keyrate;
pub mod lp;
pub mod montecarlo;
pub mod optimizer;
pub mod stats;

pub use error::{Error, Result};
