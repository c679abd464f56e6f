//! Simulation and graybox learning toolkit for noisy qudits.
//!
//! The pipeline: synthesize classical 1/f + f noise, propagate a driven
//! anharmonic qudit under that noise, fit a recurrent model that emits
//! per-observable noise operators, then optimize pulses against target
//! gates and expand the learned noise operators around a pulse.

pub mod algebra;
pub mod config;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod graybox;
pub mod interpret;
pub mod noisegen;
pub mod noiseop;
pub mod pulses;

pub use error::{Error, Result};
