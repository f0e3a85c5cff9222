//! Simulation and phase-statistics analysis of single-shot heterodyne records
//! emitted by a driven two-level system.
//!
//! The pipeline runs from [`shot_sim`] (synthetic IQ records) through
//! [`circstats`] (window integrals, phases, mean resultant length) to
//! [`estimators`] (fits against the closed forms in [`emission_law`]).

pub mod circstats;
pub mod cli;
pub mod emission_law;
pub mod emitter;
pub mod error;
pub mod estimators;
pub mod io;
pub(crate) mod serde_ext;
pub mod shot_sim;

pub use error::{Error, Result};
