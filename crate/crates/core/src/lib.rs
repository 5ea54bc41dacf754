//! Simulation and certification toolkit for capture into parametric
//! autoresonance.

pub mod asymptotics;
pub mod ensemble;
pub mod error;
pub mod integrators;
pub mod lyapunov;
pub mod model;
pub mod pendulum;
pub mod stats;

pub use error::{Error, Result};
