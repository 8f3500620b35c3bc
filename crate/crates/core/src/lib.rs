//! Simulation, estimation and synchronization of atomic clock ensembles.
//!
//! The crate models an ensemble of second-order atomic clocks whose relative
//! phases are measured, splits it into observable (relative) and unobservable
//! (ensemble mean) parts, and builds on that split:
//!
//! * [`models`]: exact discretization of the clock model and the ensemble.
//! * [`simkit`]: seeded simulation under arbitrary control policies.
//! * [`decomp`]: observable canonical decompositions and the explicit ensemble mean basis.
//! * [`filters`]: standard, determinate and stationary Kalman filters.
//! * [`control`]: the explicit ensemble mean synchronization controller.
//! * [`allan`]: analytical and statistical Allan variances and optimal weights.
//! * [`scenario`]: config-driven experiment runner behind the `eemsync` binary.

pub mod allan;
pub mod control;
pub mod decomp;
pub mod error;
pub mod filters;
pub mod linalg;
pub mod models;
pub mod scenario;
pub mod simkit;
pub mod stats;

pub use error::{Error, Result};
