//! Simulation and estimation toolkit for uplink optical-wireless indoor
//! positioning from multipath impulse-response fingerprints.

pub mod bounds;
pub mod channel;
pub mod config;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod features;
pub mod fingerprint;
pub mod regression;
pub mod scene;

pub use error::{Error, Result};
