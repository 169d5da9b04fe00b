//! Joint transmission and propulsion planning for networks of fixed-wing
//! UAVs and ground nodes.

pub mod channel;
pub mod error;
pub mod model;
pub mod nlp;
pub mod ocp;
pub mod propulsion;
pub mod scalar;
pub mod simloop;
pub mod solver;
pub mod transcribe;

pub use error::{Error, Result};
pub use scalar::Real;

/// Drag-law coefficients in double precision.
pub type Propulsion = propulsion::PropulsionCoeffs<f64>;
