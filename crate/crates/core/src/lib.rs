//! Simulation and analysis of single-ion photoionisation spectroscopy.
//!
//! A three-state Markov model of an Er ion next to a charge trap is driven by
//! a laser with detuning, power and a wandering centre frequency. Event logs
//! become filtered, noisy two-level current traces, and the analysis layer
//! recovers rates, spectra, linewidths and decay times from them.

pub mod analysis;
pub mod ctmc;
pub mod error;
pub mod fit;
pub mod seeds;
pub mod signal;
pub mod spectroscopy;
pub mod stats;

pub use error::{Error, Result};
