//! Simulation, dataset and neural-surrogate pipeline for ferroelectric FET
//! retention studies.

pub mod dataset;
pub mod error;
pub mod interface;
pub mod numerics;
pub mod oracle;
pub mod readout;
pub mod surrogate;

pub use error::{Error, Result};
