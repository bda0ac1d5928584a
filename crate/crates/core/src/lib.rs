//! Information-theoretic limits of continuous-time control and filtering.
//!
//! The crate computes total information rates of feedback and observation
//! channels two ways and checks that they agree:
//!
//! * deterministically, from Riccati equations and spectral data of the plant
//!   ([`riccati`], [`statespace`]);
//! * by Monte Carlo, through Duncan's I-MMSE identity
//!   `I = ½·E∫‖u − û‖²`, with causal estimators run along simulated paths
//!   ([`sde`], [`estimators`]).
//!
//! [`inforate`] assembles the rates, divergence decompositions, capacity
//! sandwiches and spectral bounds into reports; [`experiments`] is the named
//! registry behind the `infolim` binary.

pub mod builtins;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod inforate;
pub mod linalg;
pub mod riccati;
pub mod sde;
pub mod statespace;

pub use error::{Error, Result};
pub use linalg::{Mat, Vector};
