//! Simulation toolkit for multicalibration lower bounds.
//!
//! Exact rational predictions and outcomes, the hard environments and group
//! families, calibration ledgers, forecasters, stochastic probes and the
//! experiment drivers that tie them together.

pub mod calibration;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod export;
pub mod forecasters;
pub mod environments;
pub mod groups;
pub mod identities;
pub mod orthogonal;
pub mod probes;
pub mod rational;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use rational::RationalValue;
